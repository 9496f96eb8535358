// Independent f64 reference forward passes and a central-difference gradient
// oracle for the built-in op catalog. Shared by the gradient tests and the
// acceptance suite.

#![allow(dead_code)]

use std::collections::HashMap;

use dsscc_autodiff::{Graph, ModelParams, Op, Tensor, GDN_BETA_MIN};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct Arg {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Whether the finite-difference check covers this argument.
    pub differentiable: bool,
}

impl Arg {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>().max(1), data.len());
        Arg { shape: shape.to_vec(), data, differentiable: true }
    }

    pub fn fixed(mut self) -> Self {
        self.differentiable = false;
        self
    }
}

#[derive(Clone, Debug)]
pub struct Case {
    pub op: Op,
    pub args: Vec<Arg>,
}

fn idx4(s: &[usize], a: usize, b: usize, c: usize, d: usize) -> usize {
    ((a * s[1] + b) * s[2] + c) * s[3] + d
}

/// Reference forward in f64, written as direct loops over the defining sums.
pub fn reference(op: &Op, args: &[Arg]) -> (Vec<usize>, Vec<f64>) {
    let x = &args[0];
    let map = |f: &dyn Fn(f64) -> f64| (x.shape.clone(), x.data.iter().map(|&v| f(v)).collect());
    match op {
        Op::Conv2d { stride, pad } => {
            let (xs, ks) = (&x.shape, &args[1].shape);
            let (kh, kw, ci, co) = (ks[0], ks[1], ks[2], ks[3]);
            let oh = (xs[1] + 2 * pad - kh) / stride + 1;
            let ow = (xs[2] + 2 * pad - kw) / stride + 1;
            let os = vec![xs[0], oh, ow, co];
            let mut out = vec![0.0; os.iter().product()];
            for n in 0..xs[0] {
                for oy in 0..oh {
                    for ox in 0..ow {
                        for o in 0..co {
                            let mut acc = args.get(2).map_or(0.0, |b| b.data[o]);
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = (oy * stride + ky) as isize - *pad as isize;
                                    let ix = (ox * stride + kx) as isize - *pad as isize;
                                    if iy < 0 || ix < 0 || iy >= xs[1] as isize || ix >= xs[2] as isize {
                                        continue;
                                    }
                                    for i in 0..ci {
                                        acc += x.data[idx4(xs, n, iy as usize, ix as usize, i)]
                                            * args[1].data[idx4(ks, ky, kx, i, o)];
                                    }
                                }
                            }
                            out[idx4(&os, n, oy, ox, o)] = acc;
                        }
                    }
                }
            }
            (os, out)
        }
        Op::ConvTranspose2d { stride, pad, output_pad } => {
            let (xs, ks) = (&x.shape, &args[1].shape);
            let (kh, kw, co, ci) = (ks[0], ks[1], ks[2], ks[3]);
            let fh = (xs[1] - 1) * stride + kh + output_pad;
            let fw = (xs[2] - 1) * stride + kw + output_pad;
            let os = vec![xs[0], fh - 2 * pad, fw - 2 * pad, co];
            let mut out = vec![0.0; os.iter().product()];
            for n in 0..xs[0] {
                for iy in 0..xs[1] {
                    for ix in 0..xs[2] {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let oy = (iy * stride + ky) as isize - *pad as isize;
                                let ox = (ix * stride + kx) as isize - *pad as isize;
                                if oy < 0 || ox < 0 || oy >= os[1] as isize || ox >= os[2] as isize {
                                    continue;
                                }
                                for o in 0..co {
                                    for i in 0..ci {
                                        out[idx4(&os, n, oy as usize, ox as usize, o)] +=
                                            x.data[idx4(xs, n, iy, ix, i)] * args[1].data[idx4(ks, ky, kx, o, i)];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            if let Some(b) = args.get(2) {
                for (i, v) in out.iter_mut().enumerate() {
                    *v += b.data[i % co];
                }
            }
            (os, out)
        }
        Op::Dense => {
            let (n, din) = (x.shape[0], x.shape[1]);
            let dout = args[1].shape[1];
            let mut out = vec![0.0; n * dout];
            for r in 0..n {
                for o in 0..dout {
                    let mut acc = args.get(2).map_or(0.0, |b| b.data[o]);
                    for i in 0..din {
                        acc += x.data[r * din + i] * args[1].data[i * dout + o];
                    }
                    out[r * dout + o] = acc;
                }
            }
            (vec![n, dout], out)
        }
        Op::Flatten => (vec![x.shape[0], x.data.len() / x.shape[0]], x.data.clone()),
        Op::Relu => map(&|v| v.max(0.0)),
        Op::Softplus => map(&|v| v.exp().ln_1p()),
        Op::Exp => map(&f64::exp),
        Op::Log => map(&f64::ln),
        Op::Square => map(&|v| v * v),
        Op::Scale(f) => map(&|v| v * *f as f64),
        Op::Offset(c) => map(&|v| v + *c as f64),
        Op::Clamp { lo, hi } => map(&|v| v.clamp(*lo as f64, *hi as f64)),
        Op::LowerBound(b) => map(&|v| v.max(*b as f64)),
        Op::Add | Op::Sub | Op::Mul => {
            let y = &args[1];
            let shape = if x.data.len() >= y.data.len() { x.shape.clone() } else { y.shape.clone() };
            let n = x.data.len().max(y.data.len());
            let at = |t: &Arg, i: usize| if t.data.len() == 1 { t.data[0] } else { t.data[i] };
            let out = (0..n)
                .map(|i| match op {
                    Op::Add => at(x, i) + at(y, i),
                    Op::Sub => at(x, i) - at(y, i),
                    _ => at(x, i) * at(y, i),
                })
                .collect();
            (shape, out)
        }
        Op::Gdn { inverse } => {
            let c = *x.shape.last().unwrap();
            let (u, v) = (&args[1].data, &args[2].data);
            let mut out = vec![0.0; x.data.len()];
            for (site, o) in x.data.chunks(c).zip(out.chunks_mut(c)) {
                for i in 0..c {
                    let mut norm = GDN_BETA_MIN as f64 + u[i] * u[i];
                    for j in 0..c {
                        norm += v[i * c + j] * v[i * c + j] * site[j] * site[j];
                    }
                    o[i] = if *inverse { site[i] * norm.sqrt() } else { site[i] / norm.sqrt() };
                }
            }
            (x.shape.clone(), out)
        }
        Op::Softmax => {
            let k = x.shape[1];
            let mut out = Vec::new();
            for row in x.data.chunks(k) {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                out.extend(row.iter().map(|v| v.exp() / z));
            }
            (x.shape.clone(), out)
        }
        Op::SoftmaxCrossEntropy => {
            let (n, k) = (x.shape[0], x.shape[1]);
            let mut total = 0.0;
            for (r, row) in x.data.chunks(k).enumerate() {
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                total += z.ln() - row[args[1].data[r] as usize];
            }
            (vec![], vec![total / n as f64])
        }
        Op::Sum => (vec![], vec![x.data.iter().sum()]),
        Op::Mean => (vec![], vec![x.data.iter().sum::<f64>() / x.data.len() as f64]),
        other => panic!("no reference for {other:?}"),
    }
}

/// Runs the analytic gradient through the graph and compares it with central
/// differences of `sum(r * op(args))` for a fixed random weighting `r`.
/// Returns the worst norm-wise relative error over differentiable arguments.
pub fn check_case(case: &Case, rng: &mut ChaCha8Rng) -> f64 {
    let (out_shape, out_ref) = reference(&case.op, &case.args);
    let weights: Vec<f64> = (0..out_ref.len()).map(|_| rng.gen_range(-1.0f32..1.0) as f64).collect();

    let mut g = Graph::new();
    let mut ids = Vec::new();
    let mut feed = HashMap::new();
    for (i, a) in case.args.iter().enumerate() {
        let name = format!("arg{i}");
        ids.push(if a.differentiable { g.input_with_grad(&name) } else { g.input(&name) });
        let data = a.data.iter().map(|&v| v as f32).collect();
        feed.insert(name, Tensor::new(a.shape.clone(), data).unwrap());
    }
    let y = g.apply(case.op.clone(), &ids);
    let r = g.input("weights");
    feed.insert(
        "weights".into(),
        Tensor::new(out_shape.clone(), weights.iter().map(|&v| v as f32).collect()).unwrap(),
    );
    let prod = g.mul(y, r);
    let loss = g.sum(prod);
    g.set_output("y", y);
    let outs = g.forward(&ModelParams::new(), &feed).unwrap();
    let y_val = &outs["y"];
    assert_eq!(y_val.shape(), out_shape.as_slice(), "output shape of {:?}", case.op);
    for (a, b) in y_val.data().iter().zip(&out_ref) {
        assert!(
            (*a as f64 - b).abs() <= 1e-4 * (1.0 + b.abs()),
            "forward of {:?} differs from reference: {a} vs {b}",
            case.op
        );
    }
    let grads = g.backward(loss).unwrap();

    let objective = |args: &[Arg]| -> f64 {
        let (_, out) = reference(&case.op, args);
        out.iter().zip(&weights).map(|(a, b)| a * b).sum()
    };
    let mut worst = 0.0f64;
    for (i, a) in case.args.iter().enumerate() {
        if !a.differentiable {
            continue;
        }
        let analytic = grads.input(&format!("arg{i}")).unwrap();
        let mut args = case.args.clone();
        let mut num = Vec::with_capacity(a.data.len());
        for j in 0..a.data.len() {
            let orig = args[i].data[j];
            args[i].data[j] = orig + FD_STEP;
            let up = objective(&args);
            args[i].data[j] = orig - FD_STEP;
            let down = objective(&args);
            args[i].data[j] = orig;
            num.push((up - down) / (2.0 * FD_STEP));
        }
        let diff: f64 = analytic.data().iter().zip(&num).map(|(x, y)| (*x as f64 - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = analytic.data().iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let nn: f64 = num.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = na.max(nn);
        let rel = if denom < 1e-12 { diff } else { diff / denom };
        worst = worst.max(rel);
    }
    worst
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi) as f64).collect()
}

/// Values kept at least `margin` away from `kink` so finite differences do
/// not straddle a non-differentiable point.
fn away_from(rng: &mut ChaCha8Rng, n: usize, kink: f32, margin: f32) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(margin..1.5);
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            (kink + sign * mag) as f64
        })
        .collect()
}

fn arg(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Arg {
    let n = shape.iter().product::<usize>().max(1);
    Arg::new(shape, uniform(rng, n, lo, hi))
}

/// Op kinds covered by the oracle, with a generator of random small instances.
pub fn op_kinds() -> Vec<&'static str> {
    vec![
        "conv2d", "conv2d_strided", "conv_transpose2d", "dense", "flatten", "relu", "softplus", "exp", "log",
        "square", "scale", "offset", "clamp", "lower_bound", "add", "add_scalar", "sub", "mul", "mul_scalar",
        "gdn", "igdn", "softmax", "softmax_cross_entropy", "sum", "mean",
    ]
}

pub fn random_case(kind: &str, rng: &mut ChaCha8Rng) -> Case {
    let n = rng.gen_range(1..=2);
    let c = rng.gen_range(1..=3);
    let h = rng.gen_range(3..=5);
    let w = rng.gen_range(3..=5);
    let elems = n * h * w * c;
    let img = [n, h, w, c];
    match kind {
        "conv2d" | "conv2d_strided" => {
            let (k, stride, pad) = if kind == "conv2d" { (3, 1, 1) } else { (3, 2, rng.gen_range(0..=1)) };
            let co = rng.gen_range(1..=3);
            Case {
                op: Op::Conv2d { stride, pad },
                args: vec![
                    arg(rng, &img, -1.0, 1.0),
                    arg(rng, &[k, k, c, co], -0.5, 0.5),
                    arg(rng, &[co], -0.5, 0.5),
                ],
            }
        }
        "conv_transpose2d" => {
            let co = rng.gen_range(1..=3);
            let k = if rng.gen_bool(0.5) { 3 } else { 5 };
            let pad = k / 2;
            Case {
                op: Op::ConvTranspose2d { stride: 2, pad, output_pad: 1 },
                args: vec![
                    arg(rng, &img, -1.0, 1.0),
                    arg(rng, &[k, k, co, c], -0.5, 0.5),
                    arg(rng, &[co], -0.5, 0.5),
                ],
            }
        }
        "dense" => {
            let (din, dout) = (rng.gen_range(1..=6), rng.gen_range(1..=4));
            Case {
                op: Op::Dense,
                args: vec![arg(rng, &[n, din], -1.0, 1.0), arg(rng, &[din, dout], -1.0, 1.0), arg(rng, &[dout], -1.0, 1.0)],
            }
        }
        "flatten" => Case { op: Op::Flatten, args: vec![arg(rng, &img, -1.0, 1.0)] },
        "relu" => Case { op: Op::Relu, args: vec![Arg::new(&img, away_from(rng, elems, 0.0, 0.01))] },
        "softplus" => Case { op: Op::Softplus, args: vec![arg(rng, &img, -4.0, 4.0)] },
        "exp" => Case { op: Op::Exp, args: vec![arg(rng, &img, -2.0, 2.0)] },
        "log" => Case { op: Op::Log, args: vec![arg(rng, &img, 0.2, 3.0)] },
        "square" => Case { op: Op::Square, args: vec![arg(rng, &img, -2.0, 2.0)] },
        "scale" => Case { op: Op::Scale(rng.gen_range(-3.0..3.0)), args: vec![arg(rng, &img, -2.0, 2.0)] },
        "offset" => Case { op: Op::Offset(rng.gen_range(-3.0..3.0)), args: vec![arg(rng, &img, -2.0, 2.0)] },
        "clamp" => {
            let v: Vec<f64> = (0..elems)
                .map(|_| {
                    let m: f64 = rng.gen_range(0.01..0.9);
                    match rng.gen_range(0..3) {
                        0 => -1.0 - m,
                        1 => 1.0 + m,
                        _ => rng.gen_range(-0.99..0.99),
                    }
                })
                .collect();
            Case { op: Op::Clamp { lo: -1.0, hi: 1.0 }, args: vec![Arg::new(&img, v)] }
        }
        // Below the bound the op forwards upward-pushing gradients on purpose,
        // which is not the derivative of `max`; only the region above is checked.
        "lower_bound" => Case { op: Op::LowerBound(0.1), args: vec![arg(rng, &img, 0.12, 2.0)] },
        "add" => Case { op: Op::Add, args: vec![arg(rng, &img, -1.0, 1.0), arg(rng, &img, -1.0, 1.0)] },
        "add_scalar" => Case { op: Op::Add, args: vec![arg(rng, &img, -1.0, 1.0), arg(rng, &[], -1.0, 1.0)] },
        "sub" => Case { op: Op::Sub, args: vec![arg(rng, &img, -1.0, 1.0), arg(rng, &img, -1.0, 1.0)] },
        "mul" => Case { op: Op::Mul, args: vec![arg(rng, &img, -1.0, 1.0), arg(rng, &img, -1.0, 1.0)] },
        "mul_scalar" => Case { op: Op::Mul, args: vec![arg(rng, &[], -1.0, 1.0), arg(rng, &img, -1.0, 1.0)] },
        "gdn" | "igdn" => Case {
            op: Op::Gdn { inverse: kind == "igdn" },
            args: vec![arg(rng, &img, -2.0, 2.0), arg(rng, &[c], 0.3, 1.2), arg(rng, &[c, c], -0.8, 0.8)],
        },
        "softmax" => {
            let k = rng.gen_range(2..=5);
            Case { op: Op::Softmax, args: vec![arg(rng, &[n, k], -3.0, 3.0)] }
        }
        "softmax_cross_entropy" => {
            let k = rng.gen_range(2..=5);
            let labels: Vec<f64> = (0..n).map(|_| rng.gen_range(0..k) as f64).collect();
            Case {
                op: Op::SoftmaxCrossEntropy,
                args: vec![arg(rng, &[n, k], -3.0, 3.0), Arg::new(&[n], labels).fixed()],
            }
        }
        "sum" => Case { op: Op::Sum, args: vec![arg(rng, &img, -1.0, 1.0)] },
        "mean" => Case { op: Op::Mean, args: vec![arg(rng, &img, -1.0, 1.0)] },
        other => panic!("unknown op kind {other}"),
    }
}

pub fn tolerance(kind: &str) -> f64 {
    if kind.contains("gdn") {
        1e-3
    } else {
        1e-4
    }
}
