//! Numeric kernels behind the graph ops. Tensors are NHWC; convolution
//! kernels are stored `[kh, kw, in, out]` for `conv2d` and
//! `[kh, kw, out, in]` for `conv_transpose2d`, so one weight layout serves a
//! convolution and its adjoint.

/// `c = alpha * op(a) * op(b) + beta * c` with row-major operands, where
/// `op(a)` is `m x k` and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_trans: bool,
    b: &[f32],
    b_trans: bool,
    c: &mut [f32],
    beta: f32,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly the extents described by the strides above.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Geometry of a strided, zero-padded 2-D convolution over an NHWC input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn new(n: usize, h: usize, w: usize, c: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Some(ConvGeom { n, h, w, c, kh, kw, oh, ow, stride, pad })
    }

    pub fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub fn patch(&self) -> usize {
        self.kh * self.kw * self.c
    }
}

pub(crate) fn im2col(x: &[f32], g: &ConvGeom) -> Vec<f32> {
    let patch = g.patch();
    let mut cols = vec![0.0f32; g.rows() * patch];
    let (s, p) = (g.stride as isize, g.pad as isize);
    let mut row = 0;
    for b in 0..g.n {
        let img = &x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let src = (iy as usize * g.w + ix as usize) * g.c;
                        let d = (ky * g.kw + kx) * g.c;
                        dst[d..d + g.c].copy_from_slice(&img[src..src + g.c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Scatter-adds patch rows back onto an NHWC image of the geometry's input size.
pub(crate) fn col2im(cols: &[f32], g: &ConvGeom, x: &mut [f32]) {
    let patch = g.patch();
    let (s, p) = (g.stride as isize, g.pad as isize);
    let mut row = 0;
    for b in 0..g.n {
        let img = &mut x[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src = &cols[row * patch..(row + 1) * patch];
                for ky in 0..g.kh {
                    let iy = oy as isize * s - p + ky as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for kx in 0..g.kw {
                        let ix = ox as isize * s - p + kx as isize;
                        if ix < 0 || ix >= g.w as isize {
                            continue;
                        }
                        let dst = (iy as usize * g.w + ix as usize) * g.c;
                        let d = (ky * g.kw + kx) * g.c;
                        for (o, v) in img[dst..dst + g.c].iter_mut().zip(&src[d..d + g.c]) {
                            *o += *v;
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adds a per-channel bias to a `[rows, c]` buffer.
pub(crate) fn add_bias(out: &mut [f32], bias: &[f32]) {
    let c = bias.len();
    for row in out.chunks_exact_mut(c) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += *b;
        }
    }
}

/// Column sums of a `[rows, c]` buffer, accumulated in `f64` in row order.
pub(crate) fn column_sums(buf: &[f32], c: usize) -> Vec<f32> {
    let mut acc = vec![0.0f64; c];
    for row in buf.chunks_exact(c) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += *v as f64;
        }
    }
    acc.into_iter().map(|v| v as f32).collect()
}

pub(crate) fn softplus(x: f32) -> f32 {
    if x > 20.0 {
        x
    } else if x < -20.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Generalized divisive normalization denominators `beta_i + sum_j gamma_ij x_j^2`
/// for each site of a `[sites, c]` buffer.
pub(crate) fn gdn_norm(x: &[f32], beta: &[f32], gamma: &[f32], c: usize) -> Vec<f32> {
    let sites = x.len() / c;
    let sq: Vec<f32> = x.iter().map(|v| v * v).collect();
    let mut norm = vec![0.0f32; x.len()];
    for row in norm.chunks_exact_mut(c) {
        row.copy_from_slice(beta);
    }
    // norm[s, i] += sum_j sq[s, j] * gamma[i, j]
    gemm(sites, c, c, &sq, false, gamma, true, &mut norm, 1.0);
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, 0.0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, 0.0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, 0.0);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn im2col_col2im_are_adjoint() {
        let g = ConvGeom::new(2, 5, 4, 3, 3, 3, 2, 1).unwrap();
        let x: Vec<f32> = (0..2 * 5 * 4 * 3).map(|i| ((i * 7) % 11) as f32 - 5.0).collect();
        let cols = im2col(&x, &g);
        let y: Vec<f32> = (0..cols.len()).map(|i| ((i * 3) % 5) as f32 - 2.0).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-6);
    }

    #[test]
    fn geometry_output_size() {
        let g = ConvGeom::new(1, 32, 32, 3, 9, 9, 2, 4).unwrap();
        assert_eq!((g.oh, g.ow), (16, 16));
        assert!(ConvGeom::new(1, 2, 2, 1, 5, 5, 1, 0).is_none());
    }
}
