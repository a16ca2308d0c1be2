//! Dense kernels behind the tape: a row-major GEMM front end and the
//! patch gather/scatter pair shared by strided and transposed convolution.

use alloc::vec;
use alloc::vec::Vec;

/// `c = op(a) * op(b) + beta * c` with `op(a)` of shape `[m, k]` and
/// `op(b)` of shape `[k, n]`, all row-major. `a_t`/`b_t` select the
/// transposed interpretation of the stored buffer.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k, "gemm: lhs too small");
    assert!(b.len() >= k * n, "gemm: rhs too small");
    assert!(c.len() >= m * n, "gemm: output too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the bounds above cover every element addressed by the strides.
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

/// Geometry relating a "large" NHWC grid to a "small" patch grid through a
/// square kernel: large position `small * stride + tap - pad`.
///
/// A strided convolution reads patches of its input (large) to produce its
/// output (small); a transposed convolution scatters patches from its input
/// (small) into its output (large). Both directions share these indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchGeometry {
    pub batch: usize,
    pub large_h: usize,
    pub large_w: usize,
    pub small_h: usize,
    pub small_w: usize,
    /// Channels of the large grid.
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PatchGeometry {
    /// Geometry of a strided convolution reading a `h x w` input.
    pub fn conv(batch: usize, h: usize, w: usize, channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let small_h = (h + 2 * pad - kernel) / stride + 1;
        let small_w = (w + 2 * pad - kernel) / stride + 1;
        Self {
            batch,
            large_h: h,
            large_w: w,
            small_h,
            small_w,
            channels,
            kernel,
            stride,
            pad,
        }
    }

    /// Geometry of a transposed convolution expanding a `h x w` input into
    /// an output with `channels` channels.
    pub fn transposed(batch: usize, h: usize, w: usize, channels: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            batch,
            large_h: (h - 1) * stride + kernel - 2 * pad,
            large_w: (w - 1) * stride + kernel - 2 * pad,
            small_h: h,
            small_w: w,
            channels,
            kernel,
            stride,
            pad,
        }
    }

    pub fn rows(&self) -> usize {
        self.batch * self.small_h * self.small_w
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    pub fn large_len(&self) -> usize {
        self.batch * self.large_h * self.large_w * self.channels
    }

    #[inline]
    fn tap(&self, small: usize, tap: usize, extent: usize) -> Option<usize> {
        let pos = (small * self.stride + tap) as isize - self.pad as isize;
        if pos >= 0 && (pos as usize) < extent {
            Some(pos as usize)
        } else {
            None
        }
    }

    /// Copies every patch of `large` into a `[rows, patch_len]` matrix,
    /// zero-filling taps that fall into the padding.
    pub fn gather(&self, large: &[f64]) -> Vec<f64> {
        debug_assert_eq!(large.len(), self.large_len());
        let c = self.channels;
        let plen = self.patch_len();
        let mut cols = vec![0.0; self.rows() * plen];
        let mut row = 0;
        for b in 0..self.batch {
            let base = b * self.large_h * self.large_w * c;
            for sy in 0..self.small_h {
                for sx in 0..self.small_w {
                    let out = &mut cols[row * plen..(row + 1) * plen];
                    for ky in 0..self.kernel {
                        let Some(ly) = self.tap(sy, ky, self.large_h) else {
                            continue;
                        };
                        for kx in 0..self.kernel {
                            let Some(lx) = self.tap(sx, kx, self.large_w) else {
                                continue;
                            };
                            let src = base + (ly * self.large_w + lx) * c;
                            let dst = (ky * self.kernel + kx) * c;
                            out[dst..dst + c].copy_from_slice(&large[src..src + c]);
                        }
                    }
                    row += 1;
                }
            }
        }
        cols
    }

    /// Adjoint of [`gather`](Self::gather): accumulates patch rows back
    /// onto the large grid.
    pub fn scatter(&self, cols: &[f64], large: &mut [f64]) {
        debug_assert_eq!(large.len(), self.large_len());
        let c = self.channels;
        let plen = self.patch_len();
        let mut row = 0;
        for b in 0..self.batch {
            let base = b * self.large_h * self.large_w * c;
            for sy in 0..self.small_h {
                for sx in 0..self.small_w {
                    let src_row = &cols[row * plen..(row + 1) * plen];
                    for ky in 0..self.kernel {
                        let Some(ly) = self.tap(sy, ky, self.large_h) else {
                            continue;
                        };
                        for kx in 0..self.kernel {
                            let Some(lx) = self.tap(sx, kx, self.large_w) else {
                                continue;
                            };
                            let dst = base + (ly * self.large_w + lx) * c;
                            let src = (ky * self.kernel + kx) * c;
                            for (d, s) in large[dst..dst + c].iter_mut().zip(&src_row[src..src + c]) {
                                *d += *s;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(rows: usize, cols: usize, a: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = a[i * cols + j];
            }
        }
        t
    }

    #[test]
    fn gemm_matches_naive_for_all_transpositions() {
        let (m, k, n) = (5, 7, 3);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (aa, a_t) in [(&a, false), (&at, true)] {
            for (bb, b_t) in [(&b, false), (&bt, true)] {
                let mut c = vec![0.0; m * n];
                gemm(m, k, n, aa, a_t, bb, b_t, 0.0, &mut c);
                for (x, y) in c.iter().zip(&want) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn scatter_is_adjoint_of_gather() {
        let g = PatchGeometry::conv(2, 5, 4, 3, 3, 2, 1);
        let large: Vec<f64> = (0..g.large_len()).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let cols_probe: Vec<f64> = (0..g.rows() * g.patch_len()).map(|i| ((i * 5 % 11) as f64) - 5.0).collect();
        let gathered = g.gather(&large);
        let lhs: f64 = gathered.iter().zip(&cols_probe).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; g.large_len()];
        g.scatter(&cols_probe, &mut back);
        let rhs: f64 = back.iter().zip(&large).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn conv_and_transposed_geometry_sizes() {
        let g = PatchGeometry::conv(1, 32, 32, 3, 4, 2, 1);
        assert_eq!((g.small_h, g.small_w), (16, 16));
        let t = PatchGeometry::transposed(1, 4, 4, 8, 4, 2, 1);
        assert_eq!((t.large_h, t.large_w), (8, 8));
    }
}
