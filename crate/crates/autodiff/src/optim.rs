use std::collections::BTreeMap;

use crate::error::{AutodiffError, Result};
use crate::graph::Gradients;
use crate::params::ModelParams;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f32 },
    Adam { lr: f32, beta1: f32, beta2: f32, eps: f32 },
}

impl Optimizer {
    pub fn adam(lr: f32) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd(lr: f32) -> Self {
        Optimizer::Sgd { lr }
    }
}

/// Optimizer plus its per-parameter moment buffers.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub optimizer: Optimizer,
    step: u64,
    m: BTreeMap<String, Vec<f32>>,
    v: BTreeMap<String, Vec<f32>>,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer) -> Self {
        OptimizerState { optimizer, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Moment buffers as a parameter table (`m/<name>`, `v/<name>` and a
    /// `step` entry split into two exact 24-bit halves), for checkpointing.
    pub fn export(&self) -> ModelParams {
        let mut out = ModelParams::new();
        let (hi, lo) = ((self.step >> 24) as f32, (self.step & 0xff_ffff) as f32);
        out.insert("step", Tensor::from_slice(&[2], &[hi, lo]));
        for (prefix, bufs) in [("m", &self.m), ("v", &self.v)] {
            for (name, b) in bufs {
                out.insert(format!("{prefix}/{name}"), Tensor::from_slice(&[b.len()], b));
            }
        }
        out
    }

    /// Inverse of [`OptimizerState::export`].
    pub fn import(optimizer: Optimizer, table: &ModelParams) -> Result<Self> {
        let mut st = OptimizerState::new(optimizer);
        let step = table.get("step").ok_or_else(|| AutodiffError::Checkpoint("optimizer state lacks step".into()))?;
        if step.len() != 2 {
            return Err(AutodiffError::Checkpoint("bad step entry".into()));
        }
        st.step = ((step.data()[0] as u64) << 24) | step.data()[1] as u64;
        for (name, p) in table.iter() {
            if let Some(rest) = name.strip_prefix("m/") {
                st.m.insert(rest.to_string(), p.value.data().to_vec());
            } else if let Some(rest) = name.strip_prefix("v/") {
                st.v.insert(rest.to_string(), p.value.data().to_vec());
            }
        }
        Ok(st)
    }

    /// Applies one update to every non-frozen parameter. Frozen parameters
    /// are left bitwise unchanged; an active parameter without a gradient is
    /// an error.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
        for (name, p) in params.iter() {
            if !p.frozen && !grads.params.contains_key(name) {
                return Err(AutodiffError::MissingGradient(name.to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        for (name, p) in params.iter_mut() {
            if p.frozen {
                continue;
            }
            let g = grads.params[name].data();
            let w = p.value.data_mut();
            match self.optimizer {
                Optimizer::Sgd { lr } => {
                    for (wi, gi) in w.iter_mut().zip(g) {
                        *wi -= lr * gi;
                    }
                }
                Optimizer::Adam { lr, beta1, beta2, eps } => {
                    let m = self.m.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
                    let v = self.v.entry(name.to_string()).or_insert_with(|| vec![0.0; g.len()]);
                    let c1 = 1.0 - (beta1 as f64).powi(t);
                    let c2 = 1.0 - (beta2 as f64).powi(t);
                    for i in 0..w.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        let mh = m[i] as f64 / c1;
                        let vh = v[i] as f64 / c2;
                        w[i] -= (lr as f64 * mh / (vh.sqrt() + eps as f64)) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}
