//! Iterative single-channel Wiener post-filter.
//!
//! Each iteration turns the current magnitude estimates into power-ratio
//! gains and applies them to the complex mixture, so the filtered sources
//! add back up to the mixture.

use ndarray::Array2;
use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::dsp::{ComplexSpec, MagSpec, ValueScale};
use crate::error::{invalid, Result};

pub const WIENER_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WienerConfig {
    pub iterations: usize,
    pub eps: f64,
}

impl WienerConfig {
    pub fn new(iterations: usize) -> Self {
        Self {
            iterations,
            eps: WIENER_EPS,
        }
    }
}

impl Default for WienerConfig {
    fn default() -> Self {
        Self::new(0)
    }
}

/// Filters `K` magnitude estimates against the mixture.
///
/// With zero iterations every estimate simply takes the mixture phase
/// (phase 0 where the mixture bin is exactly zero).
pub fn wiener_filter(est_mags: &[MagSpec], mixture: &ComplexSpec, cfg: &WienerConfig) -> Result<Vec<ComplexSpec>> {
    if !(cfg.eps > 0.0) {
        return Err(invalid("wiener eps must be positive"));
    }
    for m in est_mags {
        if m.value_scale != ValueScale::Linear {
            return Err(invalid("wiener filter needs linear-scale magnitudes"));
        }
        if m.shape() != mixture.shape() {
            return Err(invalid(format!(
                "estimate shape {:?} differs from mixture shape {:?}",
                m.shape(),
                mixture.shape()
            )));
        }
    }

    if cfg.iterations == 0 {
        return Ok(est_mags
            .iter()
            .map(|m| {
                let bins = ndarray::Zip::from(&m.values).and(&mixture.bins).map_collect(|&v, &y| {
                    let n = y.norm();
                    if n > 0.0 {
                        y * (v / n)
                    } else {
                        Complex32::new(v, 0.0)
                    }
                });
                mixture.with_bins(bins)
            })
            .collect());
    }

    let (f, t) = mixture.shape();
    let mut power: Vec<Array2<f64>> = est_mags.iter().map(|m| m.values.mapv(|v| (v as f64).powi(2))).collect();
    let mut out: Vec<Array2<Complex32>> = vec![Array2::zeros((f, t)); est_mags.len()];
    for it in 0..cfg.iterations {
        let last = it + 1 == cfg.iterations;
        for r in 0..f {
            for c in 0..t {
                let total: f64 = power.iter().map(|p| p[[r, c]]).sum::<f64>() + cfg.eps;
                let y = mixture.bins[[r, c]];
                let (yr, yi) = (y.re as f64, y.im as f64);
                for (p, o) in power.iter_mut().zip(out.iter_mut()) {
                    let w = p[[r, c]] / total;
                    let (xr, xi) = (w * yr, w * yi);
                    if last {
                        o[[r, c]] = Complex32::new(xr as f32, xi as f32);
                    }
                    // Deferred write is safe: `total` was summed before this loop.
                    p[[r, c]] = xr * xr + xi * xi;
                }
            }
        }
    }
    Ok(out.into_iter().map(|b| mixture.with_bins(b)).collect())
}
