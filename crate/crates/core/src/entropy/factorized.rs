//! Per-channel non-parametric cumulative model for the hyper-latent.
//!
//! Each channel owns a small monotone network `c(z) = sigmoid(f_K(..f_1(z)))`
//! with layers `f_k(h) = softplus(M_k) h + b_k`, followed on all but the last
//! layer by `h + tanh(a_k) * tanh(h)`. Nonnegative matrices and gates in
//! `(-1, 1)` keep `c` strictly increasing.

use std::f64::consts::LN_2;

use dsscc_autodiff::{AutodiffError, CustomOp, ModelParams, Tensor};
use rand::Rng;

use crate::error::{CoreError, Result};

/// Hidden widths between the scalar input and the scalar logit.
pub const FILTERS: [usize; 3] = [3, 3, 3];
const INIT_SCALE: f64 = 10.0;

fn widths() -> Vec<usize> {
    let mut w = vec![1];
    w.extend(FILTERS);
    w.push(1);
    w
}

fn num_layers() -> usize {
    FILTERS.len() + 1
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Parameter names of the model, in the order the graph op expects them.
pub fn param_names(prefix: &str) -> Vec<String> {
    let mut names = Vec::new();
    for k in 0..num_layers() {
        names.push(format!("{prefix}.matrix{k}"));
        names.push(format!("{prefix}.bias{k}"));
        if k + 1 < num_layers() {
            names.push(format!("{prefix}.factor{k}"));
        }
    }
    names
}

/// Inserts freshly initialised parameters for `channels` channels.
pub fn init_params<R: Rng>(params: &mut ModelParams, prefix: &str, channels: usize, rng: &mut R) {
    let w = widths();
    let scale = INIT_SCALE.powf(1.0 / num_layers() as f64);
    for k in 0..num_layers() {
        let (fin, fout) = (w[k], w[k + 1]);
        let init = ((1.0 / scale / fout as f64).exp_m1()).ln() as f32;
        params.insert(format!("{prefix}.matrix{k}"), Tensor::full(&[channels, fout, fin], init));
        params.insert(
            format!("{prefix}.bias{k}"),
            Tensor::from_fn(&[channels, fout], |_| rng.gen_range(-0.5f32..0.5)),
        );
        if k + 1 < num_layers() {
            params.insert(format!("{prefix}.factor{k}"), Tensor::zeros(&[channels, fout]));
        }
    }
}

#[derive(Clone, Debug)]
struct Layer {
    fin: usize,
    fout: usize,
    /// `softplus(M)` row-major `[fout, fin]`.
    w: Vec<f64>,
    /// `sigmoid(M)`, the derivative of the reparameterization.
    dw: Vec<f64>,
    b: Vec<f64>,
    /// `tanh(a)`, absent on the last layer.
    t: Option<Vec<f64>>,
}

/// `f64` snapshot of the model used for evaluation and table building.
#[derive(Clone, Debug)]
pub struct FactorizedDensity {
    channels: Vec<Vec<Layer>>,
}

/// Intermediate values of one evaluation, kept for the backward pass.
struct Trace {
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Affine pre-activation of each gated layer.
    pre: Vec<Vec<f64>>,
    logit: f64,
}

impl FactorizedDensity {
    pub fn from_params(params: &ModelParams, prefix: &str) -> Result<Self> {
        let tensors: Vec<&Tensor> = param_names(prefix)
            .iter()
            .map(|n| params.get(n).ok_or_else(|| CoreError::Config(format!("missing parameter {n}"))))
            .collect::<Result<_>>()?;
        Self::from_tensors(&tensors).map_err(CoreError::from)
    }

    fn from_tensors(t: &[&Tensor]) -> dsscc_autodiff::Result<Self> {
        let w = widths();
        let expected = param_names("").len();
        if t.len() != expected {
            return Err(shape_err(format!("expected {expected} parameter tensors, got {}", t.len())));
        }
        let channels = t[0].shape().first().copied().unwrap_or(0);
        let mut out = vec![Vec::with_capacity(num_layers()); channels];
        let mut idx = 0;
        for k in 0..num_layers() {
            let (fin, fout) = (w[k], w[k + 1]);
            let m = t[idx];
            let b = t[idx + 1];
            if m.shape() != [channels, fout, fin] || b.shape() != [channels, fout] {
                return Err(shape_err(format!("layer {k}: matrix {:?}, bias {:?}", m.shape(), b.shape())));
            }
            let a = if k + 1 < num_layers() {
                let a = t[idx + 2];
                if a.shape() != [channels, fout] {
                    return Err(shape_err(format!("layer {k}: factor {:?}", a.shape())));
                }
                idx += 3;
                Some(a)
            } else {
                idx += 2;
                None
            };
            for (c, layers) in out.iter_mut().enumerate() {
                let mr = &m.data()[c * fout * fin..(c + 1) * fout * fin];
                layers.push(Layer {
                    fin,
                    fout,
                    w: mr.iter().map(|&v| softplus(v as f64)).collect(),
                    dw: mr.iter().map(|&v| sigmoid(v as f64)).collect(),
                    b: b.data()[c * fout..(c + 1) * fout].iter().map(|&v| v as f64).collect(),
                    t: a.map(|a| a.data()[c * fout..(c + 1) * fout].iter().map(|&v| (v as f64).tanh()).collect()),
                });
            }
        }
        Ok(FactorizedDensity { channels: out })
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    fn trace(&self, c: usize, z: f64) -> Trace {
        let mut h = vec![z];
        let mut inputs = Vec::with_capacity(num_layers());
        let mut pre = Vec::with_capacity(num_layers());
        for layer in &self.channels[c] {
            let mut next = layer.b.clone();
            for (o, nv) in next.iter_mut().enumerate() {
                for (i, hv) in h.iter().enumerate() {
                    *nv += layer.w[o * layer.fin + i] * hv;
                }
            }
            inputs.push(h);
            if let Some(t) = &layer.t {
                pre.push(next.clone());
                for (v, tv) in next.iter_mut().zip(t) {
                    *v += tv * v.tanh();
                }
            }
            h = next;
        }
        Trace { inputs, pre, logit: h[0] }
    }

    /// Logit of the cumulative, `c(z) = sigmoid(logit(z))`.
    pub fn logit(&self, c: usize, z: f64) -> f64 {
        self.trace(c, z).logit
    }

    pub fn cdf(&self, c: usize, z: f64) -> f64 {
        sigmoid(self.logit(c, z))
    }

    /// `ln (c(z + 1/2) - c(z - 1/2))`.
    pub fn ln_pmf(&self, c: usize, z: f64) -> f64 {
        ln_sigmoid_diff(self.logit(c, z + 0.5), self.logit(c, z - 0.5))
    }

    pub fn pmf(&self, c: usize, z: f64) -> f64 {
        self.ln_pmf(c, z).exp()
    }

    /// Total `-log2 P` of an NHWC tensor whose last axis indexes channels.
    pub fn bits(&self, z: &Tensor) -> Result<f64> {
        let ch = self.num_channels();
        if z.shape().last() != Some(&ch) {
            return Err(CoreError::Dimension(format!("z {:?} vs {ch} channels", z.shape())));
        }
        let mut total = 0.0;
        for (i, &v) in z.data().iter().enumerate() {
            total -= self.ln_pmf(i % ch, v as f64) / LN_2;
        }
        Ok(total)
    }

    /// Checks strict monotonicity of the logit on a grid over `[lo, hi]`.
    pub fn check_monotone(&self, lo: f64, hi: f64, points: usize) -> Result<()> {
        for c in 0..self.num_channels() {
            let mut prev = f64::NEG_INFINITY;
            for i in 0..points {
                let z = lo + (hi - lo) * i as f64 / (points - 1) as f64;
                let v = self.logit(c, z);
                if !(v > prev) {
                    return Err(CoreError::NotMonotone { channel: c });
                }
                prev = v;
            }
        }
        Ok(())
    }

    /// Smallest `z` in `[-bound, bound]` with `c(z) >= p`, by bisection.
    pub fn quantile(&self, c: usize, p: f64, bound: f64) -> f64 {
        let target = (p / (1.0 - p)).ln();
        let (mut lo, mut hi) = (-bound, bound);
        if self.logit(c, lo) >= target {
            return lo;
        }
        if self.logit(c, hi) < target {
            return hi;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.logit(c, mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo < 1e-9 {
                break;
            }
        }
        hi
    }

    /// Adds `g * d logit / d(input, params)` into the accumulators.
    fn backprop(&self, c: usize, tr: &Trace, g: f64, grads: &mut [Vec<f64>], dz: &mut f64) {
        let layers = &self.channels[c];
        let mut gh = vec![g];
        let mut slot = param_names("").len();
        for k in (0..layers.len()).rev() {
            let layer = &layers[k];
            let gated = layer.t.is_some();
            slot -= if gated { 3 } else { 2 };
            if let Some(t) = &layer.t {
                let pre = &tr.pre[k];
                let mut gpre = vec![0.0; layer.fout];
                for o in 0..layer.fout {
                    let th = pre[o].tanh();
                    gpre[o] = gh[o] * (1.0 + t[o] * (1.0 - th * th));
                    grads[slot + 2][c * layer.fout + o] += gh[o] * th * (1.0 - t[o] * t[o]);
                }
                gh = gpre;
            }
            let input = &tr.inputs[k];
            let mut gin = vec![0.0; layer.fin];
            for o in 0..layer.fout {
                grads[slot + 1][c * layer.fout + o] += gh[o];
                for i in 0..layer.fin {
                    let wi = o * layer.fin + i;
                    grads[slot][c * layer.fout * layer.fin + wi] += gh[o] * input[i] * layer.dw[wi];
                    gin[i] += layer.w[wi] * gh[o];
                }
            }
            gh = gin;
        }
        *dz += gh[0];
    }
}

/// `ln(sigmoid(u) - sigmoid(l))` for `u > l`, stable in both tails.
pub fn ln_sigmoid_diff(u: f64, l: f64) -> f64 {
    -softplus(-u) - softplus(l) + (-(l - u).exp_m1()).ln()
}

fn shape_err(detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op: "factorized_rate", detail }
}

/// Graph op: inputs `z~` (NHWC, last axis = channels) followed by the
/// tensors named by [`param_names`]; output the scalar `sum -ln P(z~_i)` in nats.
#[derive(Debug, Default)]
pub struct FactorizedRate;

impl CustomOp for FactorizedRate {
    fn name(&self) -> &str {
        "factorized_rate"
    }

    fn forward(&self, inputs: &[&Tensor]) -> dsscc_autodiff::Result<Tensor> {
        let (z, model) = split(inputs)?;
        let ch = model.num_channels();
        let mut total = 0.0f64;
        for (i, &v) in z.data().iter().enumerate() {
            total -= model.ln_pmf(i % ch, v as f64);
        }
        Ok(Tensor::scalar(total as f32))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> dsscc_autodiff::Result<Vec<Option<Tensor>>> {
        let (z, model) = split(inputs)?;
        let ch = model.num_channels();
        let g = grad_out.data()[0] as f64;
        let mut grads: Vec<Vec<f64>> = inputs[1..].iter().map(|t| vec![0.0; t.len()]).collect();
        let mut dz = vec![0.0f32; z.len()];
        for (i, &v) in z.data().iter().enumerate() {
            let c = i % ch;
            let up = model.trace(c, v as f64 + 0.5);
            let lo = model.trace(c, v as f64 - 0.5);
            // d/du and d/dl of ln(sigmoid(u) - sigmoid(l)).
            let r = 1.0 / (up.logit - lo.logit).exp_m1();
            let gu = sigmoid(-up.logit) + r;
            let gl = -sigmoid(lo.logit) - r;
            let mut d = 0.0;
            model.backprop(c, &up, -g * gu, &mut grads, &mut d);
            model.backprop(c, &lo, -g * gl, &mut grads, &mut d);
            dz[i] = d as f32;
        }
        let mut out = vec![Some(Tensor::new(z.shape().to_vec(), dz)?)];
        for (t, gr) in inputs[1..].iter().zip(grads) {
            out.push(Some(Tensor::new(t.shape().to_vec(), gr.into_iter().map(|v| v as f32).collect())?));
        }
        Ok(out)
    }
}

fn split<'a>(inputs: &[&'a Tensor]) -> dsscc_autodiff::Result<(&'a Tensor, FactorizedDensity)> {
    let (z, rest) = inputs.split_first().ok_or_else(|| shape_err("no inputs".into()))?;
    let model = FactorizedDensity::from_tensors(rest)?;
    if z.shape().last() != Some(&model.num_channels()) {
        return Err(shape_err(format!("z {:?} vs {} channels", z.shape(), model.num_channels())));
    }
    Ok((z, model))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fresh(channels: usize) -> FactorizedDensity {
        let mut p = ModelParams::new();
        init_params(&mut p, "omega", channels, &mut ChaCha8Rng::seed_from_u64(1));
        FactorizedDensity::from_params(&p, "omega").unwrap()
    }

    #[test]
    fn fresh_model_is_normalized_and_positive() {
        let m = fresh(4);
        for c in 0..4 {
            let total: f64 = (-1000..=1000).map(|k| m.pmf(c, k as f64)).sum();
            assert!(total >= 1.0 - 1e-4, "{total}");
            assert!((-1000..=1000).all(|k| m.pmf(c, k as f64) > 0.0));
        }
        m.check_monotone(-50.0, 50.0, 2001).unwrap();
    }

    #[test]
    fn sigmoid_difference_matches_direct_form() {
        for (u, l) in [(0.3, -0.2), (5.0, 4.0), (-30.0, -31.0), (40.0, 39.5)] {
            // sigmoid(u) - sigmoid(l) = sigmoid(-l) - sigmoid(-u); use the side away from 1.
            let s = if u + l > 0.0 { -1.0 } else { 1.0 };
            let direct = (s * (sigmoid(s * u) - sigmoid(s * l))).ln();
            assert!((ln_sigmoid_diff(u, l) - direct).abs() < 1e-9 * direct.abs().max(1.0));
        }
    }
}
