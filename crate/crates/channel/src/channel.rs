//! AWGN channel `r = h g + n`, the ideal capacity gate, and the practical
//! LDPC + 16QAM byte pipe.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ChannelError, Result};
use crate::ldpc::{LdpcCode, DEFAULT_MAX_ITERS};
use crate::qam;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    IdealCapacity,
    Ldpc16Qam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub mode: ChannelMode,
    pub snr_db: f64,
    pub h: Complex64,
    pub seed: u64,
    pub max_iters: usize,
    /// Path to an alist parity-check matrix; the 802.11n (1944, 1296) code when absent.
    pub alist: Option<String>,
    /// Channel uses granted in ideal mode; derived from the payload when absent.
    pub channel_uses: Option<u64>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            mode: ChannelMode::IdealCapacity,
            snr_db: 10.0,
            h: Complex64::new(1.0, 0.0),
            seed: 0,
            max_iters: DEFAULT_MAX_ITERS,
            alist: None,
            channel_uses: None,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.snr_db.is_nan() || self.snr_db == f64::INFINITY {
            return Err(ChannelError::InvalidConfig(format!("snr_db = {}", self.snr_db)));
        }
        if !(self.h.norm() > 0.0) || !self.h.norm().is_finite() {
            return Err(ChannelError::InvalidConfig(format!("|h| = {}", self.h.norm())));
        }
        if self.max_iters == 0 {
            return Err(ChannelError::InvalidConfig("max_iters = 0".into()));
        }
        Ok(())
    }

    /// Parity-check matrix selected by the configuration.
    pub fn code(&self) -> Result<LdpcCode> {
        match &self.alist {
            Some(path) => LdpcCode::load_alist(path),
            None => Ok(LdpcCode::ieee80211n_1944_r23()),
        }
    }

    pub fn rho(&self) -> f64 {
        snr_linear(self.snr_db)
    }
}

pub fn snr_linear(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

/// Shannon capacity `log2(1 + |h|^2 rho)` in bits per complex channel use.
pub fn capacity_per_use(snr_db: f64, h: Complex64) -> f64 {
    (h.norm_sqr() * snr_linear(snr_db)).ln_1p() / std::f64::consts::LN_2
}

/// Passes iff `total_bits <= uses * log2(1 + |h|^2 rho)`.
pub fn capacity_gate(total_bits: u64, uses: u64, snr_db: f64, h: Complex64) -> bool {
    total_bits as f64 <= uses as f64 * capacity_per_use(snr_db, h)
}

/// Smallest number of channel uses whose capacity covers `bits`, or `None`
/// when the channel carries nothing.
pub fn uses_at_capacity(bits: u64, snr_db: f64, h: Complex64) -> Option<u64> {
    if bits == 0 {
        return Some(0);
    }
    let c = capacity_per_use(snr_db, h);
    if c <= 0.0 {
        return None;
    }
    let mut l = (bits as f64 / c).ceil() as u64;
    while !capacity_gate(bits, l, snr_db, h) {
        l += 1;
    }
    while l > 0 && capacity_gate(bits, l - 1, snr_db, h) {
        l -= 1;
    }
    Some(l)
}

/// Applies `r = h g + n` with circular complex Gaussian noise of total
/// variance `noise_var`.
pub fn awgn(symbols: &[Complex64], h: Complex64, noise_var: f64, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let sd = (0.5 * noise_var).sqrt();
    symbols
        .iter()
        .map(|&g| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            h * g + Complex64::new(re, im) * sd
        })
        .collect()
}

/// Independent, reproducible stream for codeword `index` under `seed`.
pub fn codeword_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes.iter().flat_map(|&b| (0..8).rev().map(move |i| (b >> i) & 1)).collect()
}

pub fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8).map(|c| c.iter().fold(0u8, |a, &b| (a << 1) | b) << (8 - c.len())).collect()
}

/// Appends zero padding and a little-endian `u16` pad-length trailer so the
/// result is a whole number of `block` bytes.
pub fn frame(data: &[u8], block: usize) -> Vec<u8> {
    let total = (data.len() + 2).div_ceil(block) * block;
    let pad = total - data.len() - 2;
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(data);
    out.resize(data.len() + pad, 0);
    out.extend_from_slice(&(pad as u16).to_le_bytes());
    out
}

pub fn unframe(framed: &[u8]) -> Result<Vec<u8>> {
    if framed.len() < 2 {
        return Err(ChannelError::FrameCorrupt("frame shorter than its trailer".into()));
    }
    let n = framed.len();
    let pad = u16::from_le_bytes([framed[n - 2], framed[n - 1]]) as usize;
    if pad + 2 > n {
        return Err(ChannelError::FrameCorrupt(format!("pad length {pad} exceeds frame of {n} bytes")));
    }
    Ok(framed[..n - 2 - pad].to_vec())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameStatus {
    pub channel_uses: u64,
    pub codewords: usize,
    /// Codewords whose decoder stopped with unsatisfied checks.
    pub unconverged: usize,
    pub decoder_iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transmission {
    pub bytes: Vec<u8>,
    pub status: FrameStatus,
}

/// Sends `data` through the configured channel.
pub fn transmit(data: &[u8], cfg: &ChannelConfig, code: &LdpcCode) -> Result<Transmission> {
    cfg.validate()?;
    match cfg.mode {
        ChannelMode::IdealCapacity => {
            let bits = data.len() as u64 * 8;
            let uses = match cfg.channel_uses {
                Some(l) => l,
                None => uses_at_capacity(bits, cfg.snr_db, cfg.h).ok_or(ChannelError::FrameRejected {
                    bits,
                    uses: 0,
                    capacity: 0.0,
                })?,
            };
            if !capacity_gate(bits, uses, cfg.snr_db, cfg.h) {
                return Err(ChannelError::FrameRejected {
                    bits,
                    uses,
                    capacity: uses as f64 * capacity_per_use(cfg.snr_db, cfg.h),
                });
            }
            Ok(Transmission { bytes: data.to_vec(), status: FrameStatus { channel_uses: uses, ..Default::default() } })
        }
        ChannelMode::Ldpc16Qam => {
            if code.k() % 8 != 0 || code.n() % qam::BITS_PER_SYMBOL != 0 {
                return Err(ChannelError::InvalidMatrix(format!(
                    "({}, {}) code does not carry whole bytes and symbols",
                    code.n(),
                    code.k()
                )));
            }
            let block = code.k() / 8;
            let framed = frame(data, block);
            let noise_var = 1.0 / cfg.rho();
            let results: Vec<Result<(Vec<u8>, bool, usize)>> = framed
                .par_chunks(block)
                .enumerate()
                .map(|(i, chunk)| {
                    let cw = code.encode(&bytes_to_bits(chunk))?;
                    let (symbols, _) = qam::modulate(&cw);
                    let mut rng = codeword_rng(cfg.seed, i as u64);
                    let rx = awgn(&symbols, cfg.h, noise_var, &mut rng);
                    let llrs = qam::demodulate(&rx, noise_var, cfg.h);
                    let out = code.decode(&llrs, cfg.max_iters)?;
                    Ok((bits_to_bytes(&out.info), out.converged, out.iterations))
                })
                .collect();
            let mut received = Vec::with_capacity(framed.len());
            let mut status = FrameStatus {
                channel_uses: (framed.len() / block * code.n() / qam::BITS_PER_SYMBOL) as u64,
                codewords: framed.len() / block,
                ..Default::default()
            };
            for r in results {
                let (bytes, converged, iters) = r?;
                received.extend(bytes);
                status.unconverged += usize::from(!converged);
                status.decoder_iterations += iters;
            }
            Ok(Transmission { bytes: unframe(&received)?, status })
        }
    }
}
