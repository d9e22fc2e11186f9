//! im2col-based convolution kernels on NHWC buffers.

use crate::error::{bail, Result};
use crate::scalar::Scalar;

/// Kernel size, stride and padding of a (possibly transposed) convolution.
///
/// `output_padding` only applies to transposed convolutions, where it adds
/// rows/columns at the far edge so stride-2 layers can exactly double a
/// spatial extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvGeometry {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        ConvGeometry { kernel, stride, padding, output_padding: 0 }
    }

    pub fn with_output_padding(mut self, output_padding: usize) -> Self {
        self.output_padding = output_padding;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 {
            bail!(Shape, "kernel and stride must be >= 1, got {:?}", self);
        }
        Ok(())
    }

    /// Spatial output extent of a forward convolution: floor((n + 2p - k) / s) + 1.
    pub fn conv_out(&self, n: usize) -> Result<usize> {
        self.validate()?;
        let padded = n + 2 * self.padding;
        if padded < self.kernel {
            bail!(Shape, "input extent {} (padded {}) smaller than kernel {}", n, padded, self.kernel);
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// Spatial output extent of a transposed convolution.
    pub fn transposed_out(&self, n: usize) -> Result<usize> {
        self.validate()?;
        if n == 0 {
            bail!(Shape, "empty spatial extent");
        }
        if self.output_padding >= self.stride {
            bail!(Shape, "output padding {} must be smaller than stride {}", self.output_padding, self.stride);
        }
        let full = (n - 1) * self.stride + self.kernel + self.output_padding;
        if full <= 2 * self.padding {
            bail!(Shape, "padding {} consumes the whole output", self.padding);
        }
        Ok(full - 2 * self.padding)
    }
}

/// Spatial layout shared by `im2col` and `col2im`: the image side
/// (`h`, `w`, `c`) and the patch grid (`oh`, `ow`).
#[derive(Clone, Copy, Debug)]
pub(crate) struct PatchGrid {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub oh: usize,
    pub ow: usize,
    pub k: usize,
    pub s: usize,
    pub p: usize,
}

impl PatchGrid {
    pub fn rows(&self) -> usize {
        self.n * self.oh * self.ow
    }

    pub fn cols(&self) -> usize {
        self.k * self.k * self.c
    }

    /// Input coordinate hit by patch position `o` and kernel tap `t`, if inside.
    #[inline]
    fn source(&self, o: usize, t: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.s + t) as isize - self.p as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }
}

/// Unfold an NHWC image batch into a `[n*oh*ow, k*k*c]` patch matrix with
/// column order (ky, kx, channel).
pub(crate) fn im2col<T: Scalar>(image: &[T], g: &PatchGrid) -> Vec<T> {
    let row_len = g.cols();
    let mut cols = vec![T::zero(); g.rows() * row_len];
    let mut row = 0;
    for b in 0..g.n {
        let img = &image[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let dst = &mut cols[row * row_len..(row + 1) * row_len];
                for ky in 0..g.k {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    for kx in 0..g.k {
                        let Some(ix) = g.source(ox, kx, g.w) else {
                            continue;
                        };
                        let src = (iy * g.w + ix) * g.c;
                        let off = (ky * g.k + kx) * g.c;
                        dst[off..off + g.c].copy_from_slice(&img[src..src + g.c]);
                    }
                }
                row += 1;
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add a patch matrix back onto an NHWC image.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &PatchGrid) -> Vec<T> {
    let row_len = g.cols();
    let mut image = vec![T::zero(); g.n * g.h * g.w * g.c];
    let mut row = 0;
    for b in 0..g.n {
        let img = &mut image[b * g.h * g.w * g.c..(b + 1) * g.h * g.w * g.c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let src_row = &cols[row * row_len..(row + 1) * row_len];
                for ky in 0..g.k {
                    let Some(iy) = g.source(oy, ky, g.h) else {
                        continue;
                    };
                    for kx in 0..g.k {
                        let Some(ix) = g.source(ox, kx, g.w) else {
                            continue;
                        };
                        let dst = (iy * g.w + ix) * g.c;
                        let off = (ky * g.k + kx) * g.c;
                        for ch in 0..g.c {
                            img[dst + ch] += src_row[off + ch];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    image
}

/// `out[rows, n] = a[rows, k] * b[k, n]` for row-major operands.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], rows: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * n];
    T::gemm(rows, k, n, T::one(), a, k as isize, 1, b, n as isize, 1, T::zero(), &mut out, n as isize, 1);
    out
}

/// `a[rows, k] * b[n, k]^T`.
pub(crate) fn matmul_bt<T: Scalar>(a: &[T], b: &[T], rows: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * n];
    T::gemm(rows, k, n, T::one(), a, k as isize, 1, b, 1, k as isize, T::zero(), &mut out, n as isize, 1);
    out
}

/// `a[k, rows]^T * b[k, n]`.
pub(crate) fn matmul_at<T: Scalar>(a: &[T], b: &[T], rows: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * n];
    T::gemm(rows, k, n, T::one(), a, 1, rows as isize, b, n as isize, 1, T::zero(), &mut out, n as isize, 1);
    out
}

pub(crate) fn add_bias<T: Scalar>(out: &mut [T], bias: &[T]) {
    for row in out.chunks_mut(bias.len()) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

pub(crate) fn bias_grad<T: Scalar>(grad: &[T], width: usize) -> Vec<T> {
    let mut db = vec![T::zero(); width];
    for row in grad.chunks(width) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    db
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_extent_formula() {
        for h in 4..=12 {
            for k in [1, 3, 5] {
                for s in [1, 2] {
                    for p in [0, 1] {
                        let g = ConvGeometry::new(k, s, p);
                        if h + 2 * p < k {
                            assert!(g.conv_out(h).is_err());
                            continue;
                        }
                        let want = (h + 2 * p - k) / s + 1;
                        assert_eq!(g.conv_out(h).unwrap(), want, "h={h} k={k} s={s} p={p}");
                    }
                }
            }
        }
    }

    #[test]
    fn transposed_doubles_with_output_padding() {
        let g = ConvGeometry::new(3, 2, 1).with_output_padding(1);
        assert_eq!(g.transposed_out(7).unwrap(), 14);
        assert_eq!(g.transposed_out(14).unwrap(), 28);
        assert_eq!(g.conv_out(14).unwrap(), 7);
    }

    #[test]
    fn kernel_larger_than_input_is_rejected() {
        assert!(ConvGeometry::new(5, 1, 0).conv_out(3).is_err());
        assert!(ConvGeometry::new(0, 1, 0).conv_out(3).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = PatchGrid { n: 2, h: 5, w: 4, c: 3, oh: 3, ow: 2, k: 3, s: 2, p: 1 };
        let x: Vec<f64> = (0..g.n * g.h * g.w * g.c).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let y: Vec<f64> = (0..g.rows() * g.cols()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let lhs: f64 = im2col(&x, &g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&col2im(&y, &g)).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
