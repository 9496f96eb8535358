//! Gray-mapped square 16QAM with unit average symbol energy.
//!
//! Each nibble `b0 b1 b2 b3` maps `b0 b1` to the in-phase level and `b2 b3`
//! to the quadrature level with the Gray pairs 00 -> -3, 01 -> -1, 11 -> +1,
//! 10 -> +3, all scaled by `1/sqrt(10)`.

use num_complex::Complex64;

pub const BITS_PER_SYMBOL: usize = 4;

const LEVELS: [f64; 4] = [-3.0, -1.0, 3.0, 1.0]; // indexed by the bit pair value

fn scale() -> f64 {
    1.0 / 10f64.sqrt()
}

/// Constellation point of a nibble given as its four bits, MSB first.
pub fn symbol(bits: [u8; 4]) -> Complex64 {
    let i = LEVELS[((bits[0] << 1) | bits[1]) as usize];
    let q = LEVELS[((bits[2] << 1) | bits[3]) as usize];
    Complex64::new(i, q) * scale()
}

/// All 16 points indexed by nibble value `b0*8 + b1*4 + b2*2 + b3`.
pub fn constellation() -> [Complex64; 16] {
    std::array::from_fn(|v| symbol([(v >> 3) as u8 & 1, (v >> 2) as u8 & 1, (v >> 1) as u8 & 1, v as u8 & 1]))
}

/// Maps bits (one per `u8`, values 0/1) to symbols. The tail is zero-padded
/// to a multiple of four; the number of pad bits is returned.
pub fn modulate(bits: &[u8]) -> (Vec<Complex64>, usize) {
    let pad = (BITS_PER_SYMBOL - bits.len() % BITS_PER_SYMBOL) % BITS_PER_SYMBOL;
    let symbols = bits
        .chunks(BITS_PER_SYMBOL)
        .map(|c| {
            let mut nib = [0u8; 4];
            nib[..c.len()].copy_from_slice(c);
            symbol(nib)
        })
        .collect();
    (symbols, pad)
}

/// Exact per-bit LLRs `ln P(b=0|r) / P(b=1|r)` for received samples
/// `r = h g + n`, where `noise_var` is the total complex noise variance.
/// The receiver divides by `h` first; the effective variance becomes
/// `noise_var / |h|^2`.
pub fn demodulate(received: &[Complex64], noise_var: f64, h: Complex64) -> Vec<f64> {
    let points = constellation();
    let n0 = noise_var / h.norm_sqr();
    let mut llrs = Vec::with_capacity(received.len() * BITS_PER_SYMBOL);
    let mut metric = [0.0f64; 16];
    for &r in received {
        let eq = r / h;
        for (m, p) in metric.iter_mut().zip(&points) {
            *m = -(eq - p).norm_sqr() / n0;
        }
        for bit in 0..BITS_PER_SYMBOL {
            let mask = 8 >> bit;
            let (mut zero, mut one) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (v, &m) in metric.iter().enumerate() {
                if v & mask == 0 {
                    zero = log_add(zero, m);
                } else {
                    one = log_add(one, m);
                }
            }
            llrs.push(zero - one);
        }
    }
    llrs
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn hard_decisions(llrs: &[f64]) -> Vec<u8> {
    llrs.iter().map(|&l| u8::from(l < 0.0)).collect()
}
