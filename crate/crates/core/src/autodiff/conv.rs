//! Convolution and pooling geometry plus the column-matrix transforms.

use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Self> {
        if stride == 0 || kernel == 0 {
            return Err(Error::InvalidShape("kernel and stride must be positive".into()));
        }
        if in_h + 2 * pad < kernel || in_w + 2 * pad < kernel {
            return Err(Error::InvalidShape(format!(
                "kernel {kernel} does not fit {in_h}x{in_w} input with padding {pad}"
            )));
        }
        Ok(ConvGeom {
            n,
            in_c,
            in_h,
            in_w,
            out_c,
            kernel,
            stride,
            pad,
            out_h: (in_h + 2 * pad - kernel) / stride + 1,
            out_w: (in_w + 2 * pad - kernel) / stride + 1,
        })
    }

    pub fn out_pixels(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn col_rows(&self) -> usize {
        self.in_c * self.kernel * self.kernel
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output column range `[lo, hi)` whose input coordinate for kernel
    /// offset `k` lands inside `[0, extent)`.
    fn valid_range(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        // input = o * stride + k - pad must satisfy 0 <= input < extent
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        let hi = if extent + self.pad > k {
            ((extent + self.pad - k - 1) / self.stride + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unrolls one sample `C x H x W` into a `(C*K*K) x (OH*OW)` matrix.
pub fn im2col<T: Real>(g: &ConvGeom, x: &[T], cols: &mut [T]) {
    let k = g.kernel;
    let p = g.out_pixels();
    cols[..g.col_rows() * p].fill(T::zero());
    for c in 0..g.in_c {
        let plane = &x[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            let (y_lo, y_hi) = g.valid_range(ky, g.in_h, g.out_h);
            for kx in 0..k {
                let (x_lo, x_hi) = g.valid_range(kx, g.in_w, g.out_w);
                let row = &mut cols[((c * k + ky) * k + kx) * p..][..p];
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &plane[iy * g.in_w..(iy + 1) * g.in_w];
                    let dst = &mut row[oy * g.out_w..(oy + 1) * g.out_w];
                    if g.stride == 1 {
                        let ix0 = x_lo + kx - g.pad;
                        dst[x_lo..x_hi].copy_from_slice(&src[ix0..ix0 + (x_hi - x_lo)]);
                    } else {
                        for (ox, d) in dst[x_lo..x_hi].iter_mut().enumerate() {
                            *d = src[(x_lo + ox) * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back onto `dx`.
pub fn col2im<T: Real>(g: &ConvGeom, cols: &[T], dx: &mut [T]) {
    let k = g.kernel;
    let p = g.out_pixels();
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.in_h * g.in_w..(c + 1) * g.in_h * g.in_w];
        for ky in 0..k {
            let (y_lo, y_hi) = g.valid_range(ky, g.in_h, g.out_h);
            for kx in 0..k {
                let (x_lo, x_hi) = g.valid_range(kx, g.in_w, g.out_w);
                let row = &cols[((c * k + ky) * k + kx) * p..][..p];
                if x_lo >= x_hi {
                    continue;
                }
                for oy in y_lo..y_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &row[oy * g.out_w + x_lo..oy * g.out_w + x_hi];
                    let dst = &mut plane[iy * g.in_w..(iy + 1) * g.in_w];
                    let ix0 = x_lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, &v) in dst[ix0..ix0 + src.len()].iter_mut().zip(src) {
                            *d = *d + v;
                        }
                    } else {
                        for (d, &v) in dst[ix0..].iter_mut().step_by(g.stride).zip(src) {
                            *d = *d + v;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub kernel: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new(h: usize, w: usize, kernel: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 || h < kernel || w < kernel {
            return Err(Error::InvalidShape(format!(
                "pool kernel {kernel} stride {stride} does not fit {h}x{w}"
            )));
        }
        Ok(PoolGeom {
            kernel,
            stride,
            out_h: (h - kernel) / stride + 1,
            out_w: (w - kernel) / stride + 1,
        })
    }
}
