//! 32-bit carry-less range coder over 16-bit cumulative tables.
//!
//! The interval never straddles a carry: when the range gets small while the
//! top bytes of `low` and `low + range` still differ, the range is trimmed
//! to the next `BOT` boundary. The final interval is flushed with as few
//! bytes as possible and trailing zero bytes are dropped, since the decoder
//! reads zeros past the end.

use crate::entropy::cdf::{CdfTable, ESCAPE_LIMIT, PRECISION, TOTAL};
use crate::error::{CoreError, Result};

const TOP: u32 = 1 << 24;
const BOT: u32 = 1 << 16;

#[derive(Clone, Debug)]
pub struct RangeEncoder {
    low: u32,
    range: u32,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, out: Vec::new() }
    }

    /// Codes the interval `[cum, cum + freq)` out of `2^16`. The last slot of
    /// a table absorbs the truncation remainder.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL);
        let r = self.range >> PRECISION;
        self.low = self.low.wrapping_add(r * cum);
        self.range = if cum + freq < TOTAL { r * freq } else { self.range - r * cum };
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 24) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        let low = self.low as u64;
        let end = low + self.range as u64;
        for n in 0..=4u32 {
            let mask: u64 = if n == 4 { 0 } else { (1u64 << (32 - 8 * n)) - 1 };
            let v = (low + mask) & !mask;
            if v < end {
                for i in 0..n {
                    self.out.push((v >> (24 - 8 * i)) as u8);
                }
                break;
            }
        }
        while self.out.last() == Some(&0) {
            self.out.pop();
        }
        self.out
    }
}

#[derive(Clone, Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    low: u32,
    range: u32,
    code: u32,
    r: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut d = RangeDecoder { data, pos: 0, low: 0, range: u32::MAX, code: 0, r: 0 };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Cumulative value of the next symbol; follow with [`RangeDecoder::consume`].
    pub fn peek(&mut self) -> u32 {
        self.r = self.range >> PRECISION;
        (self.code.wrapping_sub(self.low) / self.r).min(TOTAL - 1)
    }

    pub fn consume(&mut self, cum: u32, freq: u32) {
        self.low = self.low.wrapping_add(self.r * cum);
        self.range = if cum + freq < TOTAL { self.r * freq } else { self.range - self.r * cum };
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.low <<= 8;
            self.range <<= 8;
        }
    }
}

/// Encodes one symbol per table; out-of-range symbols take the escape slot
/// followed by a uniform code over `[-ESCAPE_LIMIT, ESCAPE_LIMIT]`.
pub fn encode_symbols(symbols: &[i64], tables: &[&CdfTable]) -> Result<Vec<u8>> {
    if symbols.len() != tables.len() {
        return Err(CoreError::Dimension(format!("{} symbols, {} tables", symbols.len(), tables.len())));
    }
    let mut enc = RangeEncoder::new();
    for (&s, t) in symbols.iter().zip(tables) {
        let slot = t.slot(s);
        let (cum, freq) = t.interval(slot);
        enc.encode(cum, freq);
        if slot == t.escape_slot() {
            if s.abs() > ESCAPE_LIMIT {
                return Err(CoreError::RangeOverflow { min: s, max: s });
            }
            enc.encode((s + ESCAPE_LIMIT) as u32, 1);
        }
    }
    Ok(enc.finish())
}

pub fn decode_symbols(bytes: &[u8], tables: &[&CdfTable]) -> Vec<i64> {
    let mut dec = RangeDecoder::new(bytes);
    let mut out = Vec::with_capacity(tables.len());
    for t in tables {
        let slot = t.find(dec.peek());
        let (cum, freq) = t.interval(slot);
        dec.consume(cum, freq);
        if slot == t.escape_slot() {
            let v = dec.peek().min(2 * ESCAPE_LIMIT as u32);
            dec.consume(v, 1);
            out.push(v as i64 - ESCAPE_LIMIT);
        } else {
            out.push(t.min_sym + slot as i64);
        }
    }
    out
}

/// `sum -log2 p` of the symbols under the quantized tables, escape cost included.
pub fn shannon_bits(symbols: &[i64], tables: &[&CdfTable]) -> f64 {
    symbols
        .iter()
        .zip(tables)
        .map(|(&s, t)| {
            let slot = t.slot(s);
            let esc = if slot == t.escape_slot() { PRECISION as f64 } else { 0.0 };
            -t.prob(slot).log2() + esc
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_is_empty() {
        assert!(RangeEncoder::new().finish().len() <= 4);
        assert!(encode_symbols(&[], &[]).unwrap().is_empty());
    }

    #[test]
    fn half_probability_symbol_needs_at_most_one_byte() {
        let t = CdfTable::from_probs(0, &[0.5, 0.5 - 1e-9], 1e-9).unwrap();
        for s in 0..2 {
            let bytes = encode_symbols(&[s], &[&t]).unwrap();
            assert!(bytes.len() <= 1, "{bytes:?}");
            assert_eq!(decode_symbols(&bytes, &[&t]), vec![s]);
        }
    }

    #[test]
    fn escapes_round_trip() {
        let t = CdfTable::gaussian(1.0).unwrap();
        let syms = [0, 7, -9, 1000, -16384, 16384, 3];
        let tables = vec![&t; syms.len()];
        let bytes = encode_symbols(&syms, &tables).unwrap();
        assert_eq!(decode_symbols(&bytes, &tables), syms);
        assert!(encode_symbols(&[16385], &[&t]).is_err());
    }
}
