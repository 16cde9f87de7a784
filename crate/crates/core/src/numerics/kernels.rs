//! Dense kernels shared by the tape's forward and backward passes.

use alloc::vec;
use alloc::vec::Vec;

/// `c = op(a) · op(b) + beta · c` for row-major operands, where `op` is an
/// optional transpose of the stored matrix. Logical shapes are `m×k` and `k×n`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above and strides index within them.
    unsafe {
        matrixmultiply::dgemm(
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

pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, a, ta, b, tb, 0.0, &mut c);
    c
}

/// Geometry of a square-kernel 2-D convolution over a `channels×height×width` image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> Option<(usize, usize)> {
        let h = self.height + 2 * self.pad;
        let w = self.width + 2 * self.pad;
        if h < self.kernel || w < self.kernel || self.stride == 0 {
            return None;
        }
        Some(((h - self.kernel) / self.stride + 1, (w - self.kernel) / self.stride + 1))
    }
}

/// Unfold patches into a `(channels·k·k) × (ho·wo)` matrix.
pub fn im2col(img: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = g.out_hw().expect("validated geometry");
    let k = g.kernel;
    let cols_n = ho * wo;
    let mut cols = vec![0.0; g.channels * k * k * cols_n];
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * cols_n..(row + 1) * cols_n];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[oy * wo + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into an image.
pub fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ho, wo) = g.out_hw().expect("validated geometry");
    let k = g.kernel;
    let cols_n = ho * wo;
    let mut img = vec![0.0; g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * cols_n..(row + 1) * cols_n];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let base = iy as usize * g.width;
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            plane[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    img
}

pub fn upsample_nearest(x: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                out[(ch * oh + oy) * ow + ox] = x[(ch * h + oy / f) * w + ox / f];
            }
        }
    }
    out
}

pub fn downsample_sum(dy: &[f64], c: usize, h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h * f, w * f);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                dx[(ch * h + oy / f) * w + ox / f] += dy[(ch * oh + oy) * ow + ox];
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transpose_flags_agree_with_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.5, -1.0, 2.0, 0.0, 1.0]; // 3x2
        let c = matmul(2, 3, 2, &a, false, &b, false);
        assert_eq!(c, vec![-1.0, 7.5, -1.0, 18.0]);
        // aᵀ stored as 3x2, bᵀ stored as 2x3
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let bt = [1.0, -1.0, 0.0, 0.5, 2.0, 1.0];
        assert_eq!(matmul(2, 3, 2, &at, true, &bt, true), c);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom { channels: 2, height: 5, width: 4, kernel: 3, stride: 2, pad: 1 };
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let cols = im2col(&x, &g);
        let y: Vec<f64> = (0..cols.len()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let back = col2im(&y, &g);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
