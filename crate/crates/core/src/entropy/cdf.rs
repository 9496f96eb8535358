//! Quantized cumulative tables for the range coder.

use crate::entropy::factorized::FactorizedDensity;
use crate::entropy::gaussian;
use crate::error::{CoreError, Result};

pub const PRECISION: u32 = 16;
pub const TOTAL: u32 = 1 << PRECISION;
/// Probability mass allowed outside the table range on each side.
pub const TAIL_MASS: f64 = 1e-6;
/// Escaped symbols are coded uniformly over `[-ESCAPE_LIMIT, ESCAPE_LIMIT]`.
pub const ESCAPE_LIMIT: i64 = 1 << 14;
const MAX_WIDTH: i64 = 1 << 15;
/// Standard normal upper quantile at `TAIL_MASS`.
const GAUSSIAN_TAIL_Z: f64 = 4.753424308822899;

/// Cumulative counts for symbols `min_sym..=max_sym` plus one escape slot.
///
/// `cdf[i]` is the start of slot `i`; slot `len - 1` is the escape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CdfTable {
    pub min_sym: i64,
    pub max_sym: i64,
    cdf: Vec<u32>,
}

impl CdfTable {
    /// Quantizes `probs` (symbols `min_sym..`) and the escape mass to counts
    /// summing to `TOTAL`, each at least one.
    ///
    /// Counts are floors of `p * TOTAL` with the remaining units assigned by
    /// largest fractional part, so every count is within one unit of its
    /// target unless the minimum-count rule forces a correction.
    pub fn from_probs(min_sym: i64, probs: &[f64], escape: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(CoreError::InvalidTable("empty symbol range".into()));
        }
        let max_sym = min_sym + probs.len() as i64 - 1;
        if max_sym - min_sym + 1 > MAX_WIDTH {
            return Err(CoreError::RangeOverflow { min: min_sym, max: max_sym });
        }
        if probs.iter().chain([&escape]).any(|p| !p.is_finite() || *p < 0.0) {
            return Err(CoreError::InvalidTable("negative or non-finite probability".into()));
        }
        let mass: f64 = probs.iter().sum::<f64>() + escape;
        let targets: Vec<f64> =
            probs.iter().chain([&escape]).map(|p| p / mass * TOTAL as f64).collect();
        let mut freq: Vec<i64> = targets.iter().map(|t| (t.floor() as i64).max(1)).collect();
        let mut left = TOTAL as i64 - freq.iter().sum::<i64>();
        if left != 0 {
            let mut order: Vec<usize> = (0..freq.len()).collect();
            // Largest remainder first when adding, most over-assigned first when removing.
            order.sort_by(|&a, &b| {
                let (ra, rb) = (targets[a] - freq[a] as f64, targets[b] - freq[b] as f64);
                if left > 0 { rb.total_cmp(&ra) } else { ra.total_cmp(&rb) }.then(a.cmp(&b))
            });
            let mut i = 0;
            let mut stalled = 0;
            while left != 0 {
                let s = order[i % order.len()];
                if left > 0 {
                    freq[s] += 1;
                    left -= 1;
                    stalled = 0;
                } else if freq[s] > 1 {
                    freq[s] -= 1;
                    left += 1;
                    stalled = 0;
                } else {
                    stalled += 1;
                    if stalled > order.len() {
                        return Err(CoreError::InvalidTable("too many symbols for the precision".into()));
                    }
                }
                i += 1;
            }
        }
        let mut cdf = Vec::with_capacity(freq.len() + 1);
        let mut acc = 0u32;
        cdf.push(0);
        for f in &freq {
            acc += *f as u32;
            cdf.push(acc);
        }
        let t = CdfTable { min_sym, max_sym, cdf };
        t.validate()?;
        Ok(t)
    }

    /// Table for the zero-mean Gaussian bin model over `[-h, h]`, with `h`
    /// the smallest half-width leaving at most `TAIL_MASS` above `h + 1/2`.
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(CoreError::InvalidTable(format!("sigma {sigma}")));
        }
        let half = (GAUSSIAN_TAIL_Z * sigma - 0.5).ceil().max(0.0);
        if half >= MAX_WIDTH as f64 / 2.0 {
            return Err(CoreError::RangeOverflow { min: -(half as i64), max: half as i64 });
        }
        let half = half as i64;
        let probs: Vec<f64> = (-half..=half).map(|k| gaussian::pmf(k as f64, sigma)).collect();
        // Upper tail Q((half + 1/2) / sigma), doubled.
        let tail = puruspe::erfc((half as f64 + 0.5) / sigma * std::f64::consts::FRAC_1_SQRT_2);
        Self::from_probs(-half, &probs, tail)
    }

    /// Table for one channel of the factorized model, covering
    /// `[q(TAIL_MASS), q(1 - TAIL_MASS)]` rounded outward to integers.
    pub fn factorized(model: &FactorizedDensity, channel: usize) -> Result<Self> {
        let bound = ESCAPE_LIMIT as f64;
        let lo = model.quantile(channel, TAIL_MASS, bound);
        let hi = model.quantile(channel, 1.0 - TAIL_MASS, bound);
        let min_sym = (lo + 0.5).floor() as i64;
        let max_sym = ((hi - 0.5).ceil() as i64).max(min_sym);
        if max_sym - min_sym + 1 > MAX_WIDTH {
            return Err(CoreError::RangeOverflow { min: min_sym, max: max_sym });
        }
        let probs: Vec<f64> = (min_sym..=max_sym).map(|k| model.pmf(channel, k as f64)).collect();
        let tail = model.cdf(channel, min_sym as f64 - 0.5) + (1.0 - model.cdf(channel, max_sym as f64 + 0.5));
        Self::from_probs(min_sym, &probs, tail.max(0.0))
    }

    pub fn validate(&self) -> Result<()> {
        let n = (self.max_sym - self.min_sym + 1) as usize;
        if self.cdf.len() != n + 2 {
            return Err(CoreError::InvalidTable(format!("{} entries for {n} symbols", self.cdf.len())));
        }
        if self.cdf[0] != 0 || *self.cdf.last().unwrap() != TOTAL {
            return Err(CoreError::InvalidTable("cdf must run from 0 to 2^16".into()));
        }
        if self.cdf.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CoreError::InvalidTable("cdf not strictly increasing".into()));
        }
        Ok(())
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    /// Number of slots including the escape.
    pub fn slots(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn escape_slot(&self) -> usize {
        self.slots() - 1
    }

    /// Slot of a symbol, or the escape slot when out of range.
    pub fn slot(&self, symbol: i64) -> usize {
        if symbol < self.min_sym || symbol > self.max_sym {
            self.escape_slot()
        } else {
            (symbol - self.min_sym) as usize
        }
    }

    /// `(cum, freq)` of a slot.
    pub fn interval(&self, slot: usize) -> (u32, u32) {
        (self.cdf[slot], self.cdf[slot + 1] - self.cdf[slot])
    }

    /// Slot containing the cumulative value `v < TOTAL`.
    pub fn find(&self, v: u32) -> usize {
        self.cdf.partition_point(|&c| c <= v) - 1
    }

    /// Dequantized probability of a slot.
    pub fn prob(&self, slot: usize) -> f64 {
        self.interval(slot).1 as f64 / TOTAL as f64
    }
}
