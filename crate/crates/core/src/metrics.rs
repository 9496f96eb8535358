//! Image quality, classification and bit-allocation metrics.

use std::path::Path;

use dsscc_autodiff::Tensor;

use crate::entropy::gaussian;
use crate::error::{CoreError, Result};

pub const PSNR_CAP_DB: f64 = 100.0;

const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

fn same_len(a: &[f32], b: &[f32]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(CoreError::Dimension(format!("{} vs {} values", a.len(), b.len())));
    }
    Ok(())
}

pub fn mse(x: &[f32], y: &[f32]) -> Result<f64> {
    same_len(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| ((*a as f64) - (*b as f64)).powi(2)).sum::<f64>() / x.len() as f64)
}

/// `10 log10(255^2 / MSE)`, capped at 100 dB.
pub fn psnr(x: &[f32], y: &[f32]) -> Result<f64> {
    let m = mse(x, y)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0f64 * 255.0 / m).log10()).min(PSNR_CAP_DB))
}

/// Number of scales used for an image whose shorter side is `side`.
pub fn ms_ssim_scales(side: usize) -> usize {
    if side >= 176 {
        return 5;
    }
    let mut s = 1;
    while s < 4 && side >> s >= 8 {
        s += 1;
    }
    s
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a `h x w` plane.
fn filter(img: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean luminance and contrast-structure terms of single-scale SSIM.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let size = 11.min(h).min(w);
    let size = if size % 2 == 0 { size - 1 } else { size };
    let k = gaussian_window(size, 1.5);
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
    let (ma, oh, ow) = filter(a, h, w, &k);
    let (mb, _, _) = filter(b, h, w, &k);
    let (saa, _, _) = filter(&prod(a, a), h, w, &k);
    let (sbb, _, _) = filter(&prod(b, b), h, w, &k);
    let (sab, _, _) = filter(&prod(a, b), h, w, &k);
    let n = (oh * ow) as f64;
    let (mut l, mut cs) = (0.0, 0.0);
    for i in 0..oh * ow {
        let (va, vb) = (saa[i] - ma[i] * ma[i], sbb[i] - mb[i] * mb[i]);
        let cov = sab[i] - ma[i] * mb[i];
        l += (2.0 * ma[i] * mb[i] + c1) / (ma[i] * ma[i] + mb[i] * mb[i] + c1);
        cs += (2.0 * cov + c2) / (va + vb + c2);
    }
    (l / n, cs / n)
}

fn downsample(img: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let i = 2 * y * w + 2 * x;
            out[y * ow + x] = 0.25 * (img[i] + img[i + 1] + img[i + w] + img[i + w + 1]);
        }
    }
    (out, oh, ow)
}

/// Multi-scale SSIM of two `h x w x c` interleaved images in `[0, 255]`,
/// averaged over channels. Negative terms are clipped to zero so the score
/// lies in `[0, 1]`.
pub fn ms_ssim(x: &[f32], y: &[f32], h: usize, w: usize, c: usize) -> Result<f64> {
    same_len(x, y)?;
    if x.len() != h * w * c {
        return Err(CoreError::Dimension(format!("{} values for {h}x{w}x{c}", x.len())));
    }
    if h.min(w) < 32 {
        return Err(CoreError::Dimension(format!("{h}x{w} is below the 32-pixel minimum")));
    }
    let scales = ms_ssim_scales(h.min(w));
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let wsum: f64 = weights.iter().sum();
    let mut total = 0.0;
    for ch in 0..c {
        let mut a: Vec<f64> = (0..h * w).map(|i| x[i * c + ch] as f64).collect();
        let mut b: Vec<f64> = (0..h * w).map(|i| y[i * c + ch] as f64).collect();
        let (mut hh, mut ww) = (h, w);
        let mut score = 1.0;
        for (s, wt) in weights.iter().enumerate() {
            let (l, cs) = ssim_terms(&a, &b, hh, ww);
            let term = if s + 1 == scales { l * cs } else { cs };
            score *= term.max(0.0).powf(wt / wsum);
            if s + 1 < scales {
                let (na, nh, nw) = downsample(&a, hh, ww);
                b = downsample(&b, hh, ww).0;
                a = na;
                hh = nh;
                ww = nw;
            }
        }
        total += score;
    }
    Ok((total / c as f64).clamp(0.0, 1.0))
}

/// MAP label (ties to the lowest index) and the `k` most probable labels.
pub fn map_classify(probs: &[f32], k: usize) -> (usize, Vec<usize>) {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let label = order.first().copied().unwrap_or(0);
    order.truncate(k);
    (label, order)
}

/// Per-site `sum_c -log2 P(y~ | sigma)` over the channels of a `[1, h, w, c]` latent.
pub fn bit_allocation_map(y: &Tensor, sigma: &Tensor) -> Result<(Vec<f64>, usize, usize)> {
    let s = y.shape();
    if s.len() != 4 || s[0] != 1 || sigma.shape() != s {
        return Err(CoreError::Dimension(format!("y {s:?}, sigma {:?}", sigma.shape())));
    }
    let (h, w, c) = (s[1], s[2], s[3]);
    let mut map = vec![0.0; h * w];
    for (site, m) in map.iter_mut().enumerate() {
        for ch in 0..c {
            let i = site * c + ch;
            *m += gaussian::bits(y.data()[i] as f64, sigma.data()[i] as f64);
        }
    }
    Ok((map, h, w))
}

/// Binary PGM of a map scaled so its maximum is white.
pub fn write_pgm(path: impl AsRef<Path>, map: &[f64], h: usize, w: usize) -> Result<()> {
    let max = map.iter().cloned().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.iter().map(|v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 }));
    Ok(std::fs::write(path, out)?)
}
