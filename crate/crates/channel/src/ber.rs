//! Monte-Carlo bit-error-rate measurement of the LDPC + 16QAM chain.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{awgn, codeword_rng, snr_linear};
use crate::error::Result;
use crate::ldpc::LdpcCode;
use crate::qam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BerPoint {
    pub snr_db: f64,
    pub bits: u64,
    pub bit_errors: u64,
    pub codewords: u64,
    pub codeword_errors: u64,
}

impl BerPoint {
    pub fn ber(&self) -> f64 {
        self.bit_errors as f64 / self.bits as f64
    }

    /// Binomial standard error of the BER estimate.
    pub fn std_error(&self) -> f64 {
        let p = self.ber();
        (p * (1.0 - p) / self.bits as f64).sqrt()
    }

    /// BER, or the 95% "rule of three" upper bound `3 / bits` when no error
    /// was observed.
    pub fn ber_upper(&self) -> f64 {
        if self.bit_errors == 0 {
            3.0 / self.bits as f64
        } else {
            self.ber()
        }
    }
}

/// Runs enough random codewords to cover at least `min_bits` information bits.
pub fn ber_point(code: &LdpcCode, snr_db: f64, h: Complex64, min_bits: u64, max_iters: usize, seed: u64) -> Result<BerPoint> {
    let k = code.k() as u64;
    let codewords = min_bits.div_ceil(k).max(1);
    let noise_var = 1.0 / snr_linear(snr_db);
    let errors: Vec<Result<u64>> = (0..codewords)
        .into_par_iter()
        .map(|i| {
            let mut rng = codeword_rng(seed, i);
            let info: Vec<u8> = (0..code.k()).map(|_| rng.gen_range(0..2u8)).collect();
            let cw = code.encode(&info)?;
            let (symbols, _) = qam::modulate(&cw);
            let rx = awgn(&symbols, h, noise_var, &mut rng);
            let out = code.decode(&qam::demodulate(&rx, noise_var, h), max_iters)?;
            Ok(info.iter().zip(&out.info).filter(|(a, b)| a != b).count() as u64)
        })
        .collect();
    let mut point = BerPoint { snr_db, bits: codewords * k, bit_errors: 0, codewords, codeword_errors: 0 };
    for e in errors {
        let e = e?;
        point.bit_errors += e;
        point.codeword_errors += u64::from(e > 0);
    }
    Ok(point)
}

/// BER at every SNR on the grid; each point uses its own seed stream.
pub fn ber_sweep(code: &LdpcCode, grid_db: &[f64], min_bits: u64, max_iters: usize, seed: u64) -> Result<Vec<BerPoint>> {
    grid_db
        .iter()
        .enumerate()
        .map(|(i, &snr)| {
            ber_point(code, snr, Complex64::new(1.0, 0.0), min_bits, max_iters, seed.wrapping_add((i as u64) << 32))
        })
        .collect()
}

/// True when BER does not increase along the grid beyond two standard errors.
pub fn is_non_increasing(points: &[BerPoint]) -> bool {
    points.windows(2).all(|w| w[1].ber() <= w[0].ber() + 2.0 * (w[0].std_error() + w[1].std_error()))
}
