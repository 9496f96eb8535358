//! Zero-mean Gaussian convolved with a unit uniform, evaluated on integer bins.

use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

use dsscc_autodiff::{AutodiffError, CustomOp, Tensor};
use puruspe::{erf, erfc, erfcx};

use crate::error::{CoreError, Result};

pub const DEFAULT_SIGMA_FLOOR: f64 = 0.05;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln P(k)` with `P(k) = Phi((k + 1/2)/sigma) - Phi((k - 1/2)/sigma)`.
///
/// `k` may be any real (training evaluates it at noisy values). The upper
/// tail is evaluated through `erfcx` so that `ln P` stays finite far from
/// the mode.
pub fn ln_pmf(k: f64, sigma: f64) -> f64 {
    let a = k.abs();
    let l = (a - 0.5) / sigma;
    let u = (a + 0.5) / sigma;
    if l <= 0.0 {
        (0.5 * (erf(u * FRAC_1_SQRT_2) - erf(l * FRAC_1_SQRT_2))).ln()
    } else if l < 1.0 {
        (0.5 * (erfc(l * FRAC_1_SQRT_2) - erfc(u * FRAC_1_SQRT_2))).ln()
    } else {
        // Q(x) = erfcx(x / sqrt 2) exp(-x^2 / 2) / 2, and u^2 - l^2 = 4a / (2 sigma^2).
        let bracket = erfcx(l * FRAC_1_SQRT_2) - erfcx(u * FRAC_1_SQRT_2) * (-a / (sigma * sigma)).exp();
        -0.5 * l * l + (0.5 * bracket).ln()
    }
}

pub fn pmf(k: f64, sigma: f64) -> f64 {
    ln_pmf(k, sigma).exp()
}

/// `-log2 P(k)`.
pub fn bits(k: f64, sigma: f64) -> f64 {
    -ln_pmf(k, sigma) / LN_2
}

/// Partial derivatives of `-ln P(k)` with respect to `k` and `sigma`.
pub fn neg_ln_pmf_grad(k: f64, sigma: f64) -> (f64, f64) {
    let a = k.abs();
    let l = (a - 0.5) / sigma;
    let u = (a + 0.5) / sigma;
    let lp = ln_pmf(k, sigma);
    // phi(x) / P computed as exp(-x^2/2 - ln P) / sqrt(2 pi).
    let ratio = |x: f64| (-0.5 * x * x - lp - LN_SQRT_2PI).exp();
    let (ru, rl) = (ratio(u), ratio(l));
    let dp_da = (ru - rl) / sigma;
    let dp_ds = -(u * ru - l * rl) / sigma;
    (-k.signum() * dp_da, -dp_ds)
}

/// Per-element Gaussian scale model with a floor on `sigma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianConditional {
    pub sigma_floor: f64,
}

impl Default for GaussianConditional {
    fn default() -> Self {
        GaussianConditional { sigma_floor: DEFAULT_SIGMA_FLOOR }
    }
}

impl GaussianConditional {
    pub fn check(&self, sigma: f64) -> Result<()> {
        // f32 storage of the floor rounds it slightly below the f64 value.
        if !(sigma >= self.sigma_floor * (1.0 - 1e-6)) || !sigma.is_finite() {
            return Err(CoreError::SigmaBelowFloor { sigma, floor: self.sigma_floor });
        }
        Ok(())
    }

    pub fn pmf(&self, k: i64, sigma: f64) -> Result<f64> {
        self.check(sigma)?;
        Ok(pmf(k as f64, sigma))
    }

    /// Total `-log2 P` over matching symbol and scale slices.
    pub fn bits(&self, symbols: &[f32], sigma: &[f32]) -> Result<f64> {
        if symbols.len() != sigma.len() {
            return Err(CoreError::Dimension(format!("{} symbols, {} scales", symbols.len(), sigma.len())));
        }
        let mut total = 0.0;
        for (&k, &s) in symbols.iter().zip(sigma) {
            self.check(s as f64)?;
            total += bits(k as f64, s as f64);
        }
        Ok(total)
    }
}

/// Graph op: inputs `y~` and `sigma` of equal shape, output the scalar
/// `sum -ln P(y~_i; sigma_i)` in nats.
#[derive(Debug, Default)]
pub struct GaussianRate;

impl CustomOp for GaussianRate {
    fn name(&self) -> &str {
        "gaussian_rate"
    }

    fn forward(&self, inputs: &[&Tensor]) -> dsscc_autodiff::Result<Tensor> {
        let (y, s) = pair(inputs)?;
        let mut total = 0.0f64;
        for (&k, &sig) in y.data().iter().zip(s.data()) {
            total -= ln_pmf(k as f64, sig as f64);
        }
        Ok(Tensor::scalar(total as f32))
    }

    fn backward(&self, inputs: &[&Tensor], _output: &Tensor, grad_out: &Tensor) -> dsscc_autodiff::Result<Vec<Option<Tensor>>> {
        let (y, s) = pair(inputs)?;
        let g = grad_out.data()[0] as f64;
        let n = y.len();
        let mut dy = vec![0.0f32; n];
        let mut ds = vec![0.0f32; n];
        for i in 0..n {
            let (a, b) = neg_ln_pmf_grad(y.data()[i] as f64, s.data()[i] as f64);
            dy[i] = (g * a) as f32;
            ds[i] = (g * b) as f32;
        }
        Ok(vec![Some(Tensor::new(y.shape().to_vec(), dy)?), Some(Tensor::new(s.shape().to_vec(), ds)?)])
    }
}

fn pair<'a>(inputs: &[&'a Tensor]) -> dsscc_autodiff::Result<(&'a Tensor, &'a Tensor)> {
    match inputs {
        [y, s] if y.shape() == s.shape() => Ok((y, s)),
        _ => Err(AutodiffError::ShapeMismatch {
            op: "gaussian_rate",
            detail: inputs.iter().map(|t| format!("{:?}", t.shape())).collect::<Vec<_>>().join(", "),
        }),
    }
}
