//! Exact piecewise integration over `ỹ`.
//!
//! Every density in the toy model is constant between consecutive
//! breakpoints (`y ± 1/2`, nearest-feature boundaries and, for binned rate
//! densities, half-integers), so each integral is a finite weighted sum.

use crate::model::{RateDensity, ToyBayesModel};

#[derive(Clone, Debug)]
pub struct Segment {
    pub mid: f64,
    pub len: f64,
    /// Data values whose uniform window covers the segment.
    pub active: Vec<usize>,
    pub xhat: usize,
    /// Value of the rate density `p(ỹ)` on the segment.
    pub rate: f64,
    /// Value of the true marginal of `ỹ` on the segment.
    pub marginal: f64,
}

/// Partition of the support of the `ỹ` marginal. `refine` splits every
/// elementary segment into `2^refine` equal pieces.
pub fn segments(model: &ToyBayesModel, refine: u32) -> Vec<Segment> {
    let mut cuts: Vec<f64> = Vec::new();
    for &y in &model.features {
        cuts.push(y - 0.5);
        cuts.push(y + 0.5);
    }
    let mut sorted = model.features.clone();
    sorted.sort_by(f64::total_cmp);
    cuts.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let lo = sorted[0] - 0.5;
    let hi = sorted[sorted.len() - 1] + 0.5;
    if model.rate_density == RateDensity::IntegerBins {
        let mut k = (lo - 0.5).floor() + 0.5;
        while k <= hi {
            if k > lo {
                cuts.push(k);
            }
            k += 1.0;
        }
    }
    cuts.retain(|c| *c >= lo && *c <= hi);
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let pieces = 1usize << refine;
    let mut out = Vec::new();
    for w in cuts.windows(2) {
        let step = (w[1] - w[0]) / pieces as f64;
        if step <= 0.0 {
            continue;
        }
        for p in 0..pieces {
            let a = w[0] + step * p as f64;
            let b = if p + 1 == pieces { w[1] } else { a + step };
            let mid = 0.5 * (a + b);
            let active: Vec<usize> =
                (0..model.num_x()).filter(|&x| (mid - model.features[x]).abs() < 0.5).collect();
            let marginal = active.iter().map(|&x| model.prior_x[x]).sum();
            out.push(Segment { mid, len: b - a, active, xhat: model.nearest(mid), rate: 0.0, marginal });
        }
    }
    match model.rate_density {
        RateDensity::Marginal => {
            for s in &mut out {
                s.rate = s.marginal;
            }
        }
        RateDensity::IntegerBins => {
            // Each segment lies in exactly one unit bin centred on an integer.
            let bins: Vec<i64> = out.iter().map(|s| s.mid.round() as i64).collect();
            let mut mass = std::collections::BTreeMap::<i64, f64>::new();
            for (s, b) in out.iter().zip(&bins) {
                *mass.entry(*b).or_default() += s.len * s.marginal;
            }
            for (s, b) in out.iter_mut().zip(&bins) {
                s.rate = mass[b];
            }
        }
    }
    out
}

/// `ln v`, with zero replaced by `ln 1e-300`; `flags` counts replacements.
pub fn safe_ln(v: f64, flags: &mut usize) -> f64 {
    if v > 0.0 {
        v.ln()
    } else {
        *flags += 1;
        1e-300f64.ln()
    }
}
