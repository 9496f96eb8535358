//! Toy Bayes model with a scalar feature per data point.
//!
//! Data `x` takes finitely many values, each mapped to a feature `y(x)`;
//! the noisy feature is `ỹ ~ U(y(x) - 1/2, y(x) + 1/2)`. The receiver maps
//! `ỹ` to the nearest feature, `x̂(ỹ)`, and models `p(x | x̂)` and, per task,
//! `p(s | x̂)` with lookup tables.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TheoryError};

const NORM_TOL: f64 = 1e-12;

/// Density used as `p(ỹ)` in the rate term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateDensity {
    /// The true marginal `Σ_x p(x) U(ỹ; y(x), 1)`.
    Marginal,
    /// The marginal's mass on unit bins centred on the integers, spread
    /// uniformly over each bin.
    IntegerBins,
}

/// A semantic task: labels `s` with `p(s | x)` and a receiver-side
/// classifier table `p(s | x̂)`, weighted by `weight` in the objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Task {
    /// `label_given_x[x][s]`
    pub label_given_x: Vec<Vec<f64>>,
    /// `classifier[x̂][s]`
    pub classifier: Vec<Vec<f64>>,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyBayesModel {
    pub prior_x: Vec<f64>,
    pub features: Vec<f64>,
    /// `reconstruction[x̂][x]` = `p(x | x̂)`
    pub reconstruction: Vec<Vec<f64>>,
    pub tasks: Vec<Task>,
    pub rate_density: RateDensity,
}

fn check_distribution(what: &str, p: &[f64]) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(TheoryError::InvalidModel(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > NORM_TOL {
        return Err(TheoryError::InvalidModel(format!("{what} sums to {s}")));
    }
    Ok(())
}

impl ToyBayesModel {
    pub fn num_x(&self) -> usize {
        self.prior_x.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_x();
        if n == 0 || n > 20 {
            return Err(TheoryError::InvalidModel(format!("{n} data values (1..=20 allowed)")));
        }
        check_distribution("p(x)", &self.prior_x)?;
        if self.features.len() != n || self.features.iter().any(|f| !f.is_finite()) {
            return Err(TheoryError::InvalidModel("feature table".into()));
        }
        let mut sorted = self.features.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[1] - w[0] < 1e-6) {
            return Err(TheoryError::InvalidModel("features are not distinct".into()));
        }
        if self.reconstruction.len() != n {
            return Err(TheoryError::InvalidModel("p(x|x̂) needs one row per x̂".into()));
        }
        for (i, row) in self.reconstruction.iter().enumerate() {
            if row.len() != n {
                return Err(TheoryError::InvalidModel(format!("p(x|x̂={i}) length")));
            }
            check_distribution(&format!("p(x|x̂={i})"), row)?;
        }
        for (t, task) in self.tasks.iter().enumerate() {
            if task.weight < 0.0 || !task.weight.is_finite() {
                return Err(TheoryError::InvalidModel(format!("task {t} weight {}", task.weight)));
            }
            let k = task.label_given_x.first().map_or(0, Vec::len);
            if k == 0 || k > 5 || task.label_given_x.len() != n || task.classifier.len() != n {
                return Err(TheoryError::InvalidModel(format!("task {t} table shapes")));
            }
            for (x, row) in task.label_given_x.iter().enumerate() {
                if row.len() != k {
                    return Err(TheoryError::InvalidModel(format!("task {t} p(s|x={x}) length")));
                }
                check_distribution(&format!("task {t} p(s|x={x})"), row)?;
            }
            for (x, row) in task.classifier.iter().enumerate() {
                if row.len() != k {
                    return Err(TheoryError::InvalidModel(format!("task {t} p(s|x̂={x}) length")));
                }
                check_distribution(&format!("task {t} p(s|x̂={x})"), row)?;
            }
        }
        Ok(())
    }

    pub fn total_weight(&self) -> f64 {
        self.tasks.iter().map(|t| t.weight).sum()
    }

    pub fn num_labels(&self, task: usize) -> usize {
        self.tasks[task].label_given_x[0].len()
    }

    /// `p(s)` of a task.
    pub fn label_prior(&self, task: usize) -> Vec<f64> {
        let t = &self.tasks[task];
        let mut p = vec![0.0; self.num_labels(task)];
        for (px, row) in self.prior_x.iter().zip(&t.label_given_x) {
            for (acc, ps) in p.iter_mut().zip(row) {
                *acc += px * ps;
            }
        }
        p
    }

    /// `p(x | s)` of a task, indexed `[s][x]`. Labels with zero prior get a
    /// zero row.
    pub fn data_given_label(&self, task: usize) -> Vec<Vec<f64>> {
        let ps = self.label_prior(task);
        let t = &self.tasks[task];
        (0..ps.len())
            .map(|s| {
                (0..self.num_x())
                    .map(|x| if ps[s] > 0.0 { self.prior_x[x] * t.label_given_x[x][s] / ps[s] } else { 0.0 })
                    .collect()
            })
            .collect()
    }

    /// Index of the feature nearest to `v`; ties go to the lower index.
    pub fn nearest(&self, v: f64) -> usize {
        let mut best = 0;
        for (i, f) in self.features.iter().enumerate() {
            if (f - v).abs() < (self.features[best] - v).abs() {
                best = i;
            }
        }
        best
    }
}
