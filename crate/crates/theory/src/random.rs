//! Random toy models: Dirichlet tables and features on a jittered grid.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::model::{RateDensity, Task, ToyBayesModel};

/// Flat-Dirichlet draw, optionally with extra mass on one entry.
pub fn dirichlet(rng: &mut ChaCha8Rng, n: usize, boost: Option<(usize, f64)>) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect::<Vec<f64>>();
    for x in &mut v {
        *x = x.max(1e-12);
    }
    if let Some((i, b)) = boost {
        v[i] += b;
    }
    normalize(v)
}

pub fn normalize(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    let mut out: Vec<f64> = v.into_iter().map(|x| x / s).collect();
    // Push the rounding residue into the largest entry.
    let r = 1.0 - out.iter().sum::<f64>();
    if let Some(m) = out.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *m += r;
    }
    out
}

#[derive(Clone, Debug)]
pub struct ModelShape {
    pub max_x: usize,
    pub max_labels: usize,
    pub max_tasks: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        ModelShape { max_x: 20, max_labels: 5, max_tasks: 2 }
    }
}

pub fn random_model(rng: &mut ChaCha8Rng, shape: &ModelShape) -> ToyBayesModel {
    let n = rng.gen_range(1..=shape.max_x);
    let prior_x = dirichlet(rng, n, None);
    let spacing: f64 = rng.gen_range(0.3..2.0);
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(rng);
    let offset: f64 = rng.gen_range(-3.0..3.0);
    let features: Vec<f64> =
        slots.iter().map(|&k| offset + spacing * (k as f64 + rng.gen_range(-0.3..0.3))).collect();
    let peak: f64 = rng.gen_range(0.0..5.0);
    let reconstruction = (0..n).map(|xh| dirichlet(rng, n, Some((xh, peak)))).collect();
    let n_tasks = rng.gen_range(1..=shape.max_tasks);
    let tasks = (0..n_tasks)
        .map(|_| {
            let k = rng.gen_range(2..=shape.max_labels);
            let sharp: f64 = rng.gen_range(0.0..4.0);
            let label_given_x = (0..n).map(|_| {
                let favourite = rng.gen_range(0..k);
                dirichlet(rng, k, Some((favourite, sharp)))
            }).collect();
            let classifier = (0..n).map(|_| {
                let favourite = rng.gen_range(0..k);
                dirichlet(rng, k, Some((favourite, sharp)))
            }).collect();
            let weight = if rng.gen_bool(0.15) { 0.0 } else { rng.gen_range(0.0..3.0) };
            Task { label_given_x, classifier, weight }
        })
        .collect();
    let rate_density = if rng.gen_bool(0.5) { RateDensity::Marginal } else { RateDensity::IntegerBins };
    ToyBayesModel { prior_x, features, reconstruction, tasks, rate_density }
}

/// Random strictly positive surrogate table `Q[x̂][s]` for a task.
pub fn random_surrogate(rng: &mut ChaCha8Rng, model: &ToyBayesModel, task: usize) -> Vec<Vec<f64>> {
    let k = model.num_labels(task);
    (0..model.num_x()).map(|_| dirichlet(rng, k, None)).collect()
}
