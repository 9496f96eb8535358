//! Left- and right-hand sides of the variational bound, its term-by-term
//! decomposition, and the cross-entropy surrogate identity.

use serde::{Deserialize, Serialize};

use crate::error::{Result, TheoryError};
use crate::model::ToyBayesModel;
use crate::segments::{safe_ln, segments, Segment};

/// Relative tolerance of every identity and of the inequality.
pub const TOL: f64 = 1e-9;

/// All integrals entering the bound, each evaluated by exact piecewise sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    /// Weighted KL objective computed directly from its definition.
    pub lhs: f64,
    /// `(1 + λ) R + D0 + Σ λ_i D_i + T`.
    pub rhs: f64,
    /// `E_x E_{q(ỹ|x)} [-ln p(ỹ)]`.
    pub rate_x: f64,
    /// `E_s E_{q(ỹ|s)} [-ln p(ỹ)]` per task.
    pub rate_s: Vec<f64>,
    pub d0: f64,
    pub d: Vec<f64>,
    pub t: f64,
    /// `E_x E_{q(ỹ|x)} [ln q(ỹ|x)]`, zero for unit uniform windows.
    pub neg_entropy_x: f64,
    /// `E_s E_{q(ỹ|s)} [ln q(ỹ|s)]` per task.
    pub neg_entropy_s: Vec<f64>,
    /// KL objective restricted to the data term.
    pub kl_x: f64,
    /// KL objective of each semantic term.
    pub kl_s: Vec<f64>,
    /// Number of zero densities met where the integrand needed a logarithm.
    pub zero_density_flags: usize,
}

impl BoundTerms {
    pub fn gap(&self) -> f64 {
        self.rhs - self.lhs
    }

    /// LHS rebuilt from the decomposition `① + R + D0 + E ln p(x) + Σ λ_i (② + R_i + D_i + E ln p(s_i))`.
    pub fn decomposition(&self, model: &ToyBayesModel) -> f64 {
        let mut total = self.neg_entropy_x + self.rate_x + self.d0 + entropy_term(&model.prior_x);
        for (i, task) in model.tasks.iter().enumerate() {
            total += task.weight
                * (self.neg_entropy_s[i] + self.rate_s[i] + self.d[i] + entropy_term(&model.label_prior(i)));
        }
        total
    }
}

/// `Σ p ln p` with `0 ln 0 = 0`.
fn entropy_term(p: &[f64]) -> f64 {
    p.iter().filter(|&&v| v > 0.0).map(|v| v * v.ln()).sum()
}

/// `q(ỹ|s)` on a segment for every label of a task, from `p(x|s)` rows.
fn label_density(seg: &Segment, data_given_label: &[Vec<f64>]) -> Vec<f64> {
    data_given_label.iter().map(|row| seg.active.iter().map(|&x| row[x]).sum()).collect()
}

pub fn bound_terms(model: &ToyBayesModel, refine: u32) -> Result<BoundTerms> {
    model.validate()?;
    let segs = segments(model, refine);
    if segs.is_empty() {
        return Err(TheoryError::Integration("empty support".into()));
    }
    let mut flags = 0usize;
    let (mut rate_x, mut d0, mut neg_h_x, mut kl_x) = (0.0, 0.0, 0.0, 0.0);
    for seg in segs.iter().filter(|s| s.marginal > 0.0) {
        let ln_rate = safe_ln(seg.rate, &mut flags);
        for &x in &seg.active {
            if model.prior_x[x] <= 0.0 {
                continue;
            }
            let w = model.prior_x[x] * seg.len;
            let q = 1.0f64;
            let ln_rec = safe_ln(model.reconstruction[seg.xhat][x], &mut flags);
            rate_x -= w * q * ln_rate;
            d0 -= w * q * ln_rec;
            neg_h_x += w * q * q.ln();
            // p(ỹ|x; θ) = p(x|x̂) p(ỹ) / p(x)
            kl_x += w * q * (q.ln() - (ln_rec + ln_rate - model.prior_x[x].ln()));
        }
    }

    let n_tasks = model.tasks.len();
    let (mut rate_s, mut d, mut neg_h_s, mut kl_s) =
        (vec![0.0; n_tasks], vec![0.0; n_tasks], vec![0.0; n_tasks], vec![0.0; n_tasks]);
    for (i, task) in model.tasks.iter().enumerate() {
        let ps = model.label_prior(i);
        let dgl = model.data_given_label(i);
        for seg in segs.iter().filter(|s| s.marginal > 0.0) {
            let qs = label_density(seg, &dgl);
            let ln_rate = safe_ln(seg.rate, &mut flags);
            for (s, &q) in qs.iter().enumerate() {
                if q <= 0.0 || ps[s] <= 0.0 {
                    continue;
                }
                let w = ps[s] * seg.len;
                let ln_cls = safe_ln(task.classifier[seg.xhat][s], &mut flags);
                rate_s[i] -= w * q * ln_rate;
                d[i] -= w * q * ln_cls;
                neg_h_s[i] += w * q * q.ln();
                // p(ỹ|s; θ) = p(s|x̂) p(ỹ) / p(s)
                kl_s[i] += w * q * (q.ln() - (ln_cls + ln_rate - ps[s].ln()));
            }
        }
    }

    let lambda = model.total_weight();
    let mut t = entropy_term(&model.prior_x);
    let mut rhs = (1.0 + lambda) * rate_x + d0;
    let mut lhs = kl_x;
    for (i, task) in model.tasks.iter().enumerate() {
        t += task.weight * entropy_term(&model.label_prior(i));
        rhs += task.weight * d[i];
        lhs += task.weight * kl_s[i];
    }
    rhs += t;
    Ok(BoundTerms {
        lhs,
        rhs,
        rate_x,
        rate_s,
        d0,
        d,
        t,
        neg_entropy_x: neg_h_x,
        neg_entropy_s: neg_h_s,
        kl_x,
        kl_s,
        zero_density_flags: flags,
    })
}

pub fn eval_lhs(model: &ToyBayesModel) -> Result<f64> {
    Ok(bound_terms(model, 0)?.lhs)
}

pub fn eval_rhs(model: &ToyBayesModel) -> Result<f64> {
    Ok(bound_terms(model, 0)?.rhs)
}

fn scale(values: &[f64]) -> f64 {
    values.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Proposition1Check {
    pub pass: bool,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// `|LHS - decomposition|`.
    pub decomposition_residual: f64,
    /// `|①|`, the conditional entropy of the unit windows.
    pub window_entropy: f64,
    /// Largest `|R_x - R_s_i|` over tasks.
    pub rate_identity_residual: f64,
    pub zero_density_flags: usize,
}

/// Checks `LHS <= RHS` and the two sub-claims the argument rests on.
pub fn verify_proposition1(model: &ToyBayesModel) -> Result<Proposition1Check> {
    let b = bound_terms(model, 0)?;
    let s = scale(&[b.lhs, b.rhs]);
    let decomposition_residual = (b.lhs - b.decomposition(model)).abs();
    let rate_identity_residual = b.rate_s.iter().map(|r| (r - b.rate_x).abs()).fold(0.0, f64::max);
    let window_entropy = b.neg_entropy_x.abs();
    let pass = b.lhs <= b.rhs + TOL * s
        && decomposition_residual <= TOL * s
        && window_entropy <= TOL
        && rate_identity_residual <= TOL * scale(&[b.rate_x]);
    Ok(Proposition1Check {
        pass,
        lhs: b.lhs,
        rhs: b.rhs,
        gap: b.gap(),
        decomposition_residual,
        window_entropy,
        rate_identity_residual,
        zero_density_flags: b.zero_density_flags,
    })
}

/// Joint mass `P(x̂, v)` where `v` ranges over data values (`task = None`)
/// or the labels of a task, accumulated from the `ỹ` segments.
fn joint_with_xhat(model: &ToyBayesModel, task: Option<usize>) -> Vec<Vec<f64>> {
    let segs = segments(model, 0);
    let n = model.num_x();
    match task {
        None => {
            let mut j = vec![vec![0.0; n]; n];
            for seg in &segs {
                for &x in &seg.active {
                    j[seg.xhat][x] += model.prior_x[x] * seg.len;
                }
            }
            j
        }
        Some(i) => {
            let ps = model.label_prior(i);
            let dgl = model.data_given_label(i);
            let mut j = vec![vec![0.0; ps.len()]; n];
            for seg in &segs {
                for (s, q) in label_density(seg, &dgl).into_iter().enumerate() {
                    j[seg.xhat][s] += ps[s] * q * seg.len;
                }
            }
            j
        }
    }
}

fn normalize_rows(joint: Vec<Vec<f64>>, fallback: impl Fn(usize) -> Vec<f64>) -> Vec<Vec<f64>> {
    joint
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let z: f64 = row.iter().sum();
            if z > 0.0 {
                row.into_iter().map(|v| v / z).collect()
            } else {
                fallback(i)
            }
        })
        .collect()
}

/// Posterior `p(x | x̂)` induced by the model's encoder, indexed `[x̂][x]`.
/// Unreachable `x̂` get the prior.
pub fn induced_reconstruction(model: &ToyBayesModel) -> Vec<Vec<f64>> {
    normalize_rows(joint_with_xhat(model, None), |_| model.prior_x.clone())
}

/// Posterior `p(s | x̂)` of a task induced by the encoder, indexed `[x̂][s]`.
pub fn induced_label_posterior(model: &ToyBayesModel, task: usize) -> Vec<Vec<f64>> {
    normalize_rows(joint_with_xhat(model, Some(task)), |_| model.label_prior(task))
}

/// Marginal mass of each reconstruction value `x̂`.
pub fn xhat_mass(model: &ToyBayesModel) -> Vec<f64> {
    joint_with_xhat(model, None).iter().map(|r| r.iter().sum()).collect()
}

/// Copy of `model` whose receiver tables are the induced posteriors.
pub fn bayes_optimal(model: &ToyBayesModel) -> ToyBayesModel {
    let mut m = model.clone();
    m.reconstruction = induced_reconstruction(model);
    for i in 0..m.tasks.len() {
        m.tasks[i].classifier = induced_label_posterior(model, i);
    }
    m
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Check {
    pub pass: bool,
    /// Cross-entropy distortion under the surrogate `Q`.
    pub d_hat: f64,
    /// Distortion under the induced posterior.
    pub d: f64,
    /// `E_x̂ KL(p(s|x̂) || Q(s|x̂))`.
    pub expected_kl: f64,
    /// `|(D̂ - D) - E KL|`.
    pub residual: f64,
}

/// Brute-forces both sides of `D̂ = D + E_x̂ KL(p(s|x̂) || Q(s|x̂))` for one task
/// and a surrogate table `q[x̂][s]`.
pub fn verify_lemma1(model: &ToyBayesModel, task: usize, q: &[Vec<f64>]) -> Result<Lemma1Check> {
    model.validate()?;
    let k = model.num_labels(task);
    if q.len() != model.num_x() || q.iter().any(|r| r.len() != k) {
        return Err(TheoryError::InvalidModel("surrogate table shape".into()));
    }
    for row in q {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 || row.iter().any(|v| *v <= 0.0) {
            return Err(TheoryError::InvalidModel("surrogate rows must be positive and normalized".into()));
        }
    }
    let truth = induced_label_posterior(model, task);
    let ps = model.label_prior(task);
    let dgl = model.data_given_label(task);
    let mut flags = 0;
    let (mut d_hat, mut d) = (0.0, 0.0);
    for seg in segments(model, 0) {
        for (s, qs) in label_density(&seg, &dgl).into_iter().enumerate() {
            if qs <= 0.0 {
                continue;
            }
            let w = ps[s] * qs * seg.len;
            d_hat -= w * q[seg.xhat][s].ln();
            d -= w * safe_ln(truth[seg.xhat][s], &mut flags);
        }
    }
    let mass = xhat_mass(model);
    let mut expected_kl = 0.0;
    for (xh, row) in truth.iter().enumerate() {
        let kl: f64 = row.iter().zip(&q[xh]).filter(|(p, _)| **p > 0.0).map(|(p, qq)| p * (p / qq).ln()).sum();
        expected_kl += mass[xh] * kl;
    }
    let residual = ((d_hat - d) - expected_kl).abs();
    let pass = residual <= TOL * scale(&[d_hat, d]) && expected_kl >= -TOL && flags == 0;
    Ok(Lemma1Check { pass, d_hat, d, expected_kl, residual })
}
