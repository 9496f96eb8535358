//! CIFAR-10 binary records, a synthetic stand-in written in the same layout,
//! and single-image I/O.

use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use dsscc_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoreError, Result};

pub const SIDE: usize = 32;
pub const PIXELS: usize = SIDE * SIDE;
pub const RECORD_BYTES: usize = 1 + 3 * PIXELS;
pub const CLASSES: usize = 10;

/// Images stored HWC as bytes, with one label each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub height: usize,
    pub width: usize,
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn image_len(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// First `n` records.
    pub fn take(&self, n: usize) -> Dataset {
        self.slice(0, n)
    }

    /// Images `start..end`, clamped to the set.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let end = end.min(self.len());
        let start = start.min(end);
        let l = self.image_len();
        Dataset {
            height: self.height,
            width: self.width,
            images: self.images[start * l..end * l].to_vec(),
            labels: self.labels[start..end].to_vec(),
        }
    }

    pub fn batch(&self, idx: &[usize]) -> Tensor {
        let n = self.image_len();
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            data.extend(self.image(i).iter().map(|&b| b as f32));
        }
        Tensor::new(vec![idx.len(), self.height, self.width, 3], data).expect("batch shape")
    }

    pub fn batch_labels(&self, idx: &[usize]) -> Tensor {
        Tensor::from_fn(&[idx.len()], |k| self.labels[idx[k]] as f32)
    }
}

/// Parses concatenated CIFAR-10 records (label byte, then R, G, B planes).
pub fn parse_cifar10(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() % RECORD_BYTES != 0 {
        return Err(CoreError::MalformedRecord(format!(
            "{} bytes is not a multiple of the {RECORD_BYTES}-byte record",
            bytes.len()
        )));
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut images = Vec::with_capacity(n * 3 * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for rec in bytes.chunks_exact(RECORD_BYTES) {
        if rec[0] as usize >= CLASSES {
            return Err(CoreError::BadLabel(rec[0]));
        }
        labels.push(rec[0]);
        let planes = &rec[1..];
        for p in 0..PIXELS {
            images.extend([planes[p], planes[PIXELS + p], planes[2 * PIXELS + p]]);
        }
    }
    Ok(Dataset { height: SIDE, width: SIDE, images, labels })
}

pub fn load_cifar10(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_cifar10(&fs::read(path)?)
}

pub fn encode_cifar10(data: &Dataset) -> Result<Vec<u8>> {
    if data.height != SIDE || data.width != SIDE {
        return Err(CoreError::Dimension(format!("{}x{} images", data.height, data.width)));
    }
    let mut out = Vec::with_capacity(data.len() * RECORD_BYTES);
    for i in 0..data.len() {
        out.push(data.labels[i]);
        let img = data.image(i);
        for c in 0..3 {
            out.extend((0..PIXELS).map(|p| img[3 * p + c]));
        }
    }
    Ok(out)
}

pub fn write_cifar10(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    Ok(fs::write(path, encode_cifar10(data)?)?)
}

/// Deterministic 10-class 32x32 set. The class fixes a shape (disk, square,
/// triangle, ring, cross) and whether the shape carries a fine stripe
/// texture; colours, position, size, background gradient, a distractor
/// blob and pixel noise are random.
pub fn synthetic(n: usize, seed: u64) -> Dataset {
    let mut images = Vec::with_capacity(n * 3 * PIXELS);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let label = rng.gen_range(0..CLASSES);
        labels.push(label as u8);
        images.extend(synthetic_image(label, &mut rng));
    }
    Dataset { height: SIDE, width: SIDE, images, labels }
}

fn synthetic_image(label: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let shape = label % 5;
    let striped = label >= 5;
    let colour = |rng: &mut ChaCha8Rng| [rng.gen_range(0.0..255.0f32), rng.gen_range(0.0..255.0), rng.gen_range(0.0..255.0)];
    let (bg0, bg1) = (colour(rng), colour(rng));
    let mut fg = colour(rng);
    // Keep the foreground visibly apart from the mean background.
    let mean_bg: f32 = (0..3).map(|c| 0.5 * (bg0[c] + bg1[c])).sum::<f32>() / 3.0;
    let mean_fg: f32 = fg.iter().sum::<f32>() / 3.0;
    if (mean_fg - mean_bg).abs() < 60.0 {
        let shift = if mean_bg > 127.0 { -90.0 } else { 90.0 };
        for v in &mut fg {
            *v = (*v + shift).clamp(0.0, 255.0);
        }
    }
    let dir = rng.gen_range(0.0..2.0 * PI);
    let (cx, cy) = (rng.gen_range(11.0..21.0f32), rng.gen_range(11.0..21.0f32));
    let r = rng.gen_range(7.0..11.0f32);
    let rot = rng.gen_range(0.0..PI / 2.0);
    let stripe_dir = rng.gen_range(0.0..PI);
    let period = rng.gen_range(3.0..5.0f32);
    let blob = (rng.gen_range(0.0..32.0f32), rng.gen_range(0.0..32.0f32), rng.gen_range(2.0..4.0f32), colour(rng));
    let noise = Normal::new(0.0f32, 6.0).expect("valid normal");

    let mut out = vec![0u8; 3 * PIXELS];
    for py in 0..SIDE {
        for px in 0..SIDE {
            let (x, y) = (px as f32 + 0.5, py as f32 + 0.5);
            let t = ((x - 16.0) * dir.cos() + (y - 16.0) * dir.sin()) / 45.0 + 0.5;
            let mut pix = [0.0f32; 3];
            for c in 0..3 {
                pix[c] = bg0[c] * (1.0 - t) + bg1[c] * t;
            }
            if (x - blob.0).powi(2) + (y - blob.1).powi(2) < blob.2 * blob.2 {
                pix = blob.3;
            }
            let (dx, dy) = (x - cx, y - cy);
            let (u, v) = (dx * rot.cos() + dy * rot.sin(), -dx * rot.sin() + dy * rot.cos());
            let d = (dx * dx + dy * dy).sqrt();
            let inside = match shape {
                0 => d < r,
                1 => u.abs() < 0.8 * r && v.abs() < 0.8 * r,
                2 => v > -0.6 * r && v < 0.9 * r && u.abs() < (0.9 * r - v) * 0.66,
                3 => d < r && d > 0.55 * r,
                _ => (u.abs() < 0.3 * r && v.abs() < r) || (v.abs() < 0.3 * r && u.abs() < r),
            };
            if inside {
                pix = fg;
                if striped {
                    let phase = (x * stripe_dir.cos() + y * stripe_dir.sin()) * 2.0 * PI / period;
                    let s = if phase.sin() >= 0.0 { 35.0 } else { -35.0 };
                    for v in &mut pix {
                        *v += s;
                    }
                }
            }
            for c in 0..3 {
                let v = pix[c] + noise.sample(rng);
                out[(py * SIDE + px) * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Reads a PNG or PPM/PGM file into a `[1, H, W, 3]` tensor in `[0, 255]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let img = image::open(path.as_ref()).map_err(|e| CoreError::Image(e.to_string()))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|b| b as f32).collect();
    Ok(Tensor::new(vec![1, h, w, 3], data)?)
}

/// Writes the first image of a `[B, H, W, 3]` tensor, rounded and clamped, as PNG.
pub fn save_png(path: impl AsRef<Path>, x: &Tensor) -> Result<()> {
    let s = x.shape();
    if s.len() != 4 || s[3] != 3 {
        return Err(CoreError::Dimension(format!("image tensor {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let bytes: Vec<u8> = x.data()[..h * w * 3].iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    image::RgbImage::from_raw(w as u32, h as u32, bytes)
        .expect("buffer size")
        .save(path.as_ref())
        .map_err(|e| CoreError::Image(e.to_string()))
}
