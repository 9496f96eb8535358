//! Monte-Carlo verification campaigns with JSON-serializable summaries.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bound::{bound_terms, verify_lemma1, verify_proposition1};
use crate::error::Result;
use crate::random::{random_model, random_surrogate, ModelShape};

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropositionReport {
    pub models: usize,
    pub passed: usize,
    pub min_gap: f64,
    pub max_relative_violation: f64,
    pub max_decomposition_residual: f64,
    pub max_rate_identity_residual: f64,
    pub max_window_entropy: f64,
    /// Largest change of any bound term when every segment is halved.
    pub max_refinement_change: f64,
    pub zero_density_flags: usize,
    pub failed_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub surrogates: usize,
    pub passed: usize,
    pub max_residual: f64,
    pub min_expected_kl: f64,
    pub failed_indices: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub seed: u64,
    pub proposition: PropositionReport,
    pub lemma: LemmaReport,
}

impl TheoryReport {
    pub fn pass(&self) -> bool {
        self.proposition.passed == self.proposition.models && self.lemma.passed == self.lemma.surrogates
    }
}

pub fn proposition_campaign(models: usize, seed: u64) -> Result<PropositionReport> {
    let shape = ModelShape::default();
    let results: Vec<Result<_>> = (0..models)
        .into_par_iter()
        .map(|i| {
            let model = random_model(&mut stream(seed, i as u64), &shape);
            let check = verify_proposition1(&model)?;
            let coarse = bound_terms(&model, 0)?;
            let fine = bound_terms(&model, 1)?;
            let change = [
                (coarse.lhs, fine.lhs),
                (coarse.rhs, fine.rhs),
                (coarse.rate_x, fine.rate_x),
                (coarse.d0, fine.d0),
            ]
            .iter()
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
            Ok((check, change))
        })
        .collect();
    let mut r = PropositionReport {
        models,
        passed: 0,
        min_gap: f64::INFINITY,
        max_relative_violation: 0.0,
        max_decomposition_residual: 0.0,
        max_rate_identity_residual: 0.0,
        max_window_entropy: 0.0,
        max_refinement_change: 0.0,
        zero_density_flags: 0,
        failed_indices: Vec::new(),
    };
    for (i, res) in results.into_iter().enumerate() {
        let (c, change) = res?;
        if c.pass {
            r.passed += 1;
        } else {
            r.failed_indices.push(i);
        }
        r.min_gap = r.min_gap.min(c.gap);
        r.max_relative_violation = r.max_relative_violation.max((-c.gap).max(0.0) / c.rhs.abs().max(1.0));
        r.max_decomposition_residual = r.max_decomposition_residual.max(c.decomposition_residual);
        r.max_rate_identity_residual = r.max_rate_identity_residual.max(c.rate_identity_residual);
        r.max_window_entropy = r.max_window_entropy.max(c.window_entropy);
        r.max_refinement_change = r.max_refinement_change.max(change);
        r.zero_density_flags += c.zero_density_flags;
    }
    Ok(r)
}

pub fn lemma_campaign(surrogates: usize, seed: u64) -> Result<LemmaReport> {
    let shape = ModelShape::default();
    let results: Vec<Result<_>> = (0..surrogates)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed ^ 0x5151_5151, i as u64);
            let model = random_model(&mut rng, &shape);
            let q = random_surrogate(&mut rng, &model, 0);
            verify_lemma1(&model, 0, &q)
        })
        .collect();
    let mut r = LemmaReport {
        surrogates,
        passed: 0,
        max_residual: 0.0,
        min_expected_kl: f64::INFINITY,
        failed_indices: Vec::new(),
    };
    for (i, res) in results.into_iter().enumerate() {
        let c = res?;
        if c.pass {
            r.passed += 1;
        } else {
            r.failed_indices.push(i);
        }
        r.max_residual = r.max_residual.max(c.residual);
        r.min_expected_kl = r.min_expected_kl.min(c.expected_kl);
    }
    Ok(r)
}

pub fn run(models: usize, surrogates: usize, seed: u64) -> Result<TheoryReport> {
    Ok(TheoryReport {
        seed,
        proposition: proposition_campaign(models, seed)?,
        lemma: lemma_campaign(surrogates, seed)?,
    })
}
