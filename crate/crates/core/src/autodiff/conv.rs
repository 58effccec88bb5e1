//! im2col convolution and bilinear up-sampling kernels.

use super::Real;

/// Square convolution geometry. Only the two configurations the networks use
/// are constructible outside the crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub(crate) kernel: usize,
    pub(crate) stride: usize,
    pub(crate) pad: usize,
}

impl ConvSpec {
    /// 4x4 kernel, stride 2, padding 1: halves both spatial dimensions.
    pub const DOWN: ConvSpec = ConvSpec {
        kernel: 4,
        stride: 2,
        pad: 1,
    };
    /// 3x3 kernel, stride 1, padding 1: preserves spatial dimensions.
    pub const SAME: ConvSpec = ConvSpec {
        kernel: 3,
        stride: 1,
        pad: 1,
    };

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn output_size(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        if h + 2 * p < k || w + 2 * p < k {
            return None;
        }
        Some(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }
}

pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub oh: usize,
    pub ow: usize,
    pub spec: ConvSpec,
}

impl Geometry {
    pub fn rows(&self) -> usize {
        self.c * self.spec.kernel * self.spec.kernel
    }

    pub fn cols(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfold one `(C, H, W)` image into a `(C*k*k, OH*OW)` matrix.
pub(crate) fn im2col<T: Real>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let ConvSpec { kernel: k, stride: s, pad: p } = g.spec;
    let area = g.cols();
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * area..][..area];
                for oy in 0..g.oh {
                    let out = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if s == 1 {
                        // Valid output columns satisfy 0 <= ox + kj - p < w.
                        let lo = p.saturating_sub(kj).min(g.ow);
                        let hi = (g.w + p).saturating_sub(kj).min(g.ow).max(lo);
                        out[..lo].fill(T::zero());
                        out[hi..].fill(T::zero());
                        let start = lo + kj - p;
                        out[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * s + kj) as isize - p as isize;
                            *o = if ix >= 0 && ix < g.w as isize {
                                src[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Fold a column matrix back onto an image, accumulating overlaps.
pub(crate) fn col2im<T: Real>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let ConvSpec { kernel: k, stride: s, pad: p } = g.spec;
    let area = g.cols();
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * area..][..area];
                for oy in 0..g.oh {
                    let iy = (oy * s + ki) as isize - p as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src = &row[oy * g.ow..(oy + 1) * g.ow];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * s + kj) as isize - p as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Source taps for one axis of a factor-two bilinear up-sample with
/// half-pixel centers: `(lo, hi, weight_of_hi)` per output index.
pub(crate) fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|o| {
            let src = ((o as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}
