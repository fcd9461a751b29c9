//! Patch extraction for convolutions expressed as GEMM.
//!
//! `im2col` lays out a `[c, h, w]` image as a `[c*k*k, oh*ow]` patch matrix
//! whose row index is `(c*k + ki)*k + kj`; `col2im` scatters (adds) such a
//! matrix back. Padding taps read as zero and are dropped on the way back.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Geometry2d {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl Geometry2d {
    pub fn conv(channels: usize, height: usize, width: usize, kernel: usize, stride: usize, pad: usize) -> Self {
        let out = |n: usize| (n + 2 * pad - kernel) / stride + 1;
        Geometry2d {
            channels,
            height,
            width,
            kernel,
            stride,
            pad,
            out_height: out(height),
            out_width: out(width),
        }
    }

    pub fn rows(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.out_height * self.out_width
    }
}

pub fn im2col_2d<T: Scalar>(img: &[T], g: &Geometry2d, col: &mut [T]) {
    let k = g.kernel;
    let p = g.positions();
    debug_assert_eq!(img.len(), g.channels * g.height * g.width);
    debug_assert_eq!(col.len(), g.rows() * p);
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut col[((c * k + ki) * k + kj) * p..][..p];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.out_width..(oy + 1) * g.out_width];
                    if iy < 0 || iy >= g.height as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.width as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

pub fn col2im_2d<T: Scalar>(col: &[T], g: &Geometry2d, img: &mut [T]) {
    let k = g.kernel;
    let p = g.positions();
    debug_assert_eq!(img.len(), g.channels * g.height * g.width);
    debug_assert_eq!(col.len(), g.rows() * p);
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = &col[((c * k + ki) * k + kj) * p..][..p];
                for oy in 0..g.out_height {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    let src = &row[oy * g.out_width..(oy + 1) * g.out_width];
                    for (ox, &s) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.width {
                            dst[ix as usize] = dst[ix as usize] + s;
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded, stride-1 patches of a `[c, len]` sequence: `[c*k, len]`.
pub fn im2col_1d<T: Scalar>(seq: &[T], channels: usize, len: usize, kernel: usize, col: &mut [T]) {
    let pad = (kernel - 1) / 2;
    debug_assert_eq!(seq.len(), channels * len);
    debug_assert_eq!(col.len(), channels * kernel * len);
    for c in 0..channels {
        let src = &seq[c * len..(c + 1) * len];
        for t in 0..kernel {
            let row = &mut col[(c * kernel + t) * len..][..len];
            // output position i reads input i + t - pad
            for (i, d) in row.iter_mut().enumerate() {
                let j = (i + t) as isize - pad as isize;
                *d = if j < 0 || j >= len as isize { T::zero() } else { src[j as usize] };
            }
        }
    }
}

pub fn col2im_1d<T: Scalar>(col: &[T], channels: usize, len: usize, kernel: usize, seq: &mut [T]) {
    let pad = (kernel - 1) / 2;
    debug_assert_eq!(seq.len(), channels * len);
    for c in 0..channels {
        let dst = &mut seq[c * len..(c + 1) * len];
        for t in 0..kernel {
            let row = &col[(c * kernel + t) * len..][..len];
            for (i, &s) in row.iter().enumerate() {
                let j = (i + t) as isize - pad as isize;
                if j >= 0 && (j as usize) < len {
                    dst[j as usize] = dst[j as usize] + s;
                }
            }
        }
    }
}
