//! Binary LDPC codes: quasi-cyclic construction, alist I/O, systematic
//! encoding and sum-product decoding.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{ChannelError, Result};

pub const DEFAULT_MAX_ITERS: usize = 50;

/// Lifting factor of the IEEE 802.11n length-1944 codes.
pub const IEEE80211N_Z: usize = 81;

/// Base matrix of the IEEE 802.11n rate-2/3 (1944, 1296) code; `-1` is an
/// all-zero block, `e >= 0` the identity cyclically shifted by `e`.
#[rustfmt::skip]
pub const IEEE80211N_1944_R23: [[i32; 24]; 8] = [
    [61, 75,  4, 63, 56, -1, -1, -1, -1, -1, -1,  8, -1,  2, 17, 25,  1,  0, -1, -1, -1, -1, -1, -1],
    [56, 74, 77, 20, -1, -1, -1, 64, 24,  4, 67, -1,  7, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1],
    [28, 21, 68, 10,  7, 14, 65, -1, -1, -1, 23, -1, -1, -1, 75, -1, -1, -1,  0,  0, -1, -1, -1, -1],
    [48, 38, 43, 78, 76, -1, -1, -1, -1,  5, 36, -1, 15, 72, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1],
    [40,  2, 53, 25, -1, 52, 62, -1, 20, -1, -1, 44, -1, -1, -1, -1,  0, -1, -1, -1,  0,  0, -1, -1],
    [69, 23, 64, 10, 22, -1, 21, -1, -1, -1, -1, -1, 68, 23, 29, -1, -1, -1, -1, -1, -1,  0,  0, -1],
    [12,  0, 68, 20, 55, 61, -1, 40, -1, -1, -1, 52, -1, -1, -1, 44, -1, -1, -1, -1, -1, -1,  0,  0],
    [58,  8, 34, 64, 78, -1, -1, 11, 78, 24, -1, -1, -1, -1, -1, 58,  1, -1, -1, -1, -1, -1, -1,  0],
];

/// Sparse parity-check matrix with the information bits in the first
/// `n - m` columns and the parity bits in the last `m`.
#[derive(Clone, Debug)]
pub struct LdpcCode {
    n: usize,
    m: usize,
    rows: Vec<Vec<usize>>,
    cols: Vec<Vec<usize>>,
    parity_inverse: Vec<Vec<u64>>,
}

impl LdpcCode {
    pub fn from_rows(n: usize, rows: Vec<Vec<usize>>) -> Result<Self> {
        let m = rows.len();
        if m == 0 || m >= n {
            return Err(ChannelError::InvalidMatrix(format!("{m} checks for {n} bits")));
        }
        let mut cols = vec![Vec::new(); n];
        for (r, row) in rows.iter().enumerate() {
            for &c in row {
                if c >= n {
                    return Err(ChannelError::InvalidMatrix(format!("column {c} out of range in row {r}")));
                }
                cols[c].push(r);
            }
        }
        let mut rows = rows;
        for row in &mut rows {
            row.sort_unstable();
            if row.windows(2).any(|w| w[0] == w[1]) {
                return Err(ChannelError::InvalidMatrix("repeated entry".into()));
            }
        }
        let parity_inverse = invert_parity_part(n, &rows)?;
        Ok(LdpcCode { n, m, rows, cols, parity_inverse })
    }

    /// Expands a quasi-cyclic base matrix with lifting factor `z`.
    pub fn from_base(base: &[[i32; 24]], z: usize) -> Result<Self> {
        let nb = base.first().map_or(0, |r| r.len());
        let mut rows = Vec::with_capacity(base.len() * z);
        for brow in base {
            for r in 0..z {
                let mut row = Vec::new();
                for (bc, &shift) in brow.iter().enumerate() {
                    if shift >= 0 {
                        row.push(bc * z + (r + shift as usize) % z);
                    }
                }
                rows.push(row);
            }
        }
        Self::from_rows(nb * z, rows)
    }

    pub fn ieee80211n_1944_r23() -> Self {
        Self::from_base(&IEEE80211N_1944_R23, IEEE80211N_Z).expect("standard matrix is valid")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.n - self.m
    }

    pub fn rows(&self) -> &[Vec<usize>] {
        &self.rows
    }

    pub fn edges(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn syndrome_ok(&self, word: &[u8]) -> bool {
        self.rows.iter().all(|row| row.iter().fold(0u8, |a, &c| a ^ word[c]) == 0)
    }

    /// Systematic encoding: `codeword = [info | parity]` with
    /// `parity = H_p^-1 H_s info` over GF(2).
    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k() {
            return Err(ChannelError::LengthMismatch { expected: self.k(), got: info.len() });
        }
        let words = self.m.div_ceil(64);
        let mut syn = vec![0u64; words];
        for (r, row) in self.rows.iter().enumerate() {
            let bit = row.iter().filter(|&&c| c < self.k()).fold(0u8, |a, &c| a ^ info[c]);
            if bit == 1 {
                syn[r / 64] |= 1 << (r % 64);
            }
        }
        let mut word = info.to_vec();
        word.extend(self.parity_inverse.iter().map(|inv| {
            let ones: u32 = inv.iter().zip(&syn).map(|(a, b)| (a & b).count_ones()).sum();
            (ones & 1) as u8
        }));
        debug_assert!(self.syndrome_ok(&word));
        Ok(word)
    }

    /// Sum-product decoding of channel LLRs (`ln P(0)/P(1)`), stopping as
    /// soon as all parity checks hold.
    pub fn decode(&self, llrs: &[f64], max_iters: usize) -> Result<DecodeOutcome> {
        if llrs.len() != self.n {
            return Err(ChannelError::LengthMismatch { expected: self.n, got: llrs.len() });
        }
        let edges = self.edges();
        let mut edge_var = Vec::with_capacity(edges);
        let mut row_start = Vec::with_capacity(self.m + 1);
        for row in &self.rows {
            row_start.push(edge_var.len());
            edge_var.extend_from_slice(row);
        }
        row_start.push(edges);
        let mut var_edges: Vec<Vec<usize>> = vec![Vec::new(); self.n];
        for (e, &v) in edge_var.iter().enumerate() {
            var_edges[v].push(e);
        }

        let mut v2c: Vec<f64> = edge_var.iter().map(|&v| llrs[v]).collect();
        let mut c2v = vec![0.0f64; edges];
        let mut hard: Vec<u8> = llrs.iter().map(|&l| u8::from(l < 0.0)).collect();
        let mut t = Vec::new();
        let mut prefix = Vec::new();
        let mut iterations = 0;
        let mut converged = false;
        while iterations < max_iters {
            iterations += 1;
            for c in 0..self.m {
                let (s, e) = (row_start[c], row_start[c + 1]);
                t.clear();
                t.extend(v2c[s..e].iter().map(|&l| (0.5 * l).tanh()));
                prefix.clear();
                let mut acc = 1.0;
                for &x in &t {
                    prefix.push(acc);
                    acc *= x;
                }
                let mut suffix = 1.0;
                for i in (0..t.len()).rev() {
                    let p = (prefix[i] * suffix).clamp(-MAX_TANH, MAX_TANH);
                    c2v[s + i] = 2.0 * p.atanh();
                    suffix *= t[i];
                }
            }
            for (v, es) in var_edges.iter().enumerate() {
                let total = llrs[v] + es.iter().map(|&e| c2v[e]).sum::<f64>();
                for &e in es {
                    v2c[e] = total - c2v[e];
                }
                hard[v] = u8::from(total < 0.0);
            }
            if self.syndrome_ok(&hard) {
                converged = true;
                break;
            }
        }
        let info = hard[..self.k()].to_vec();
        Ok(DecodeOutcome { codeword: hard, info, converged, iterations })
    }

    pub fn to_alist(&self) -> String {
        let mut s = String::new();
        let max_col = self.cols.iter().map(Vec::len).max().unwrap_or(0);
        let max_row = self.rows.iter().map(Vec::len).max().unwrap_or(0);
        let join = |v: &mut dyn Iterator<Item = usize>| v.map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "{} {}", self.n, self.m);
        let _ = writeln!(s, "{max_col} {max_row}");
        let _ = writeln!(s, "{}", join(&mut self.cols.iter().map(Vec::len)));
        let _ = writeln!(s, "{}", join(&mut self.rows.iter().map(Vec::len)));
        for (list, width) in [(&self.cols, max_col), (&self.rows, max_row)] {
            for entry in list.iter() {
                let mut idx: Vec<usize> = entry.iter().map(|&i| i + 1).collect();
                idx.resize(width, 0);
                let _ = writeln!(s, "{}", join(&mut idx.into_iter()));
            }
        }
        s
    }

    /// Parses the alist format. Zero entries are padding and are skipped.
    pub fn from_alist(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| -> Result<(usize, Vec<usize>)> {
            let (no, line) = lines.next().ok_or(ChannelError::Alist { line: 0, msg: format!("missing {what}") })?;
            let vals = line
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| ChannelError::Alist { line: no + 1, msg: e.to_string() })?;
            Ok((no + 1, vals))
        };
        let (no, dims) = next("dimensions")?;
        let [n, m] = dims[..] else {
            return Err(ChannelError::Alist { line: no, msg: "expected `n m`".into() });
        };
        next("maximum weights")?;
        next("column weights")?;
        let (_, row_w) = next("row weights")?;
        if row_w.len() != m {
            return Err(ChannelError::Alist { line: 4, msg: format!("{} row weights for {m} rows", row_w.len()) });
        }
        for _ in 0..n {
            next("column list")?;
        }
        let mut rows = Vec::with_capacity(m);
        for r in 0..m {
            let (no, vals) = next("row list")?;
            let row: Vec<usize> = vals.into_iter().filter(|&v| v != 0).map(|v| v - 1).collect();
            if row.len() != row_w[r] {
                return Err(ChannelError::Alist { line: no, msg: format!("row weight {} != {}", row.len(), row_w[r]) });
            }
            rows.push(row);
        }
        Self::from_rows(n, rows)
    }

    pub fn load_alist(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_alist(&std::fs::read_to_string(path)?)
    }
}

const MAX_TANH: f64 = 1.0 - 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct DecodeOutcome {
    pub codeword: Vec<u8>,
    pub info: Vec<u8>,
    pub converged: bool,
    pub iterations: usize,
}

/// Gauss-Jordan inverse over GF(2) of the square block formed by the last
/// `m` columns. Rows of the result are bit-packed.
fn invert_parity_part(n: usize, rows: &[Vec<usize>]) -> Result<Vec<Vec<u64>>> {
    let m = rows.len();
    let k = n - m;
    let words = m.div_ceil(64);
    // Augmented [A | I], each half bit-packed.
    let mut a: Vec<(Vec<u64>, Vec<u64>)> = rows
        .iter()
        .enumerate()
        .map(|(r, row)| {
            let mut left = vec![0u64; words];
            for &c in row.iter().filter(|&&c| c >= k) {
                let j = c - k;
                left[j / 64] ^= 1 << (j % 64);
            }
            let mut right = vec![0u64; words];
            right[r / 64] |= 1 << (r % 64);
            (left, right)
        })
        .collect();
    for col in 0..m {
        let (w, b) = (col / 64, 1u64 << (col % 64));
        let pivot = (col..m)
            .find(|&r| a[r].0[w] & b != 0)
            .ok_or_else(|| ChannelError::InvalidMatrix("parity part is singular".into()))?;
        a.swap(col, pivot);
        let (pl, pr) = a[col].clone();
        for (r, row) in a.iter_mut().enumerate() {
            if r != col && row.0[w] & b != 0 {
                for i in 0..words {
                    row.0[i] ^= pl[i];
                    row.1[i] ^= pr[i];
                }
            }
        }
    }
    Ok(a.into_iter().map(|(_, inv)| inv).collect())
}
