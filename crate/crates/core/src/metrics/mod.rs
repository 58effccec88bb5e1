//! Separation quality metrics.
//!
//! Every value is in dB, computed in `f64`, and clamped to
//! `[floor_db, cap_db]` so silence and perfect reconstruction both stay
//! finite.

mod bss;
mod report;

pub use bss::{bss_eval, BssProjector, BssScores};
pub use report::{evaluate_piece, Aggregate, EvalReport, EvalRow, Metric};

use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, HOP};
use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub eps: f64,
    pub floor_db: f64,
    pub cap_db: f64,
    /// Taps of the distortion filter allowed by [`bss_eval`].
    pub proj_filter_len: usize,
    /// Frames whose target energy is below this count as silent.
    pub silence_threshold: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        Self {
            eps: 1e-9,
            floor_db: -80.0,
            cap_db: 80.0,
            proj_filter_len: 512,
            silence_threshold: 1e-8,
        }
    }
}

impl MetricConfig {
    /// Single-tap projection, where the metrics have closed forms.
    pub fn test_mode() -> Self {
        Self {
            proj_filter_len: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0) || self.proj_filter_len == 0 || !(self.floor_db < self.cap_db) {
            return Err(invalid(format!("invalid metric config {self:?}")));
        }
        Ok(())
    }

    fn clamp(&self, db: f64) -> f64 {
        if db.is_nan() {
            return self.floor_db;
        }
        db.clamp(self.floor_db, self.cap_db)
    }
}

pub(crate) fn db_ratio(num: f64, den: f64, cfg: &MetricConfig) -> f64 {
    cfg.clamp(10.0 * (num / (den + cfg.eps)).log10())
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Optimal scale `α = <est, ref> / ‖ref‖²`.
fn projection_scale(est: &Waveform, reference: &Waveform) -> Result<f64> {
    if est.len() != reference.len() {
        return Err(invalid(format!("estimate has {} samples, reference {}", est.len(), reference.len())));
    }
    let energy = dot(reference.samples(), reference.samples());
    if energy == 0.0 {
        return Err(Error::SilentTarget);
    }
    Ok(dot(est.samples(), reference.samples()) / energy)
}

/// Scale-invariant SDR: `10 log10(‖α r‖² / (‖α r - e‖² + ε))`.
pub fn si_sdr(est: &Waveform, reference: &Waveform, cfg: &MetricConfig) -> Result<f64> {
    let alpha = projection_scale(est, reference)?;
    let (mut target, mut error) = (0.0, 0.0);
    for (&e, &r) in est.samples().iter().zip(reference.samples()) {
        let t = alpha * r as f64;
        target += t * t;
        error += (t - e as f64).powi(2);
    }
    Ok(db_ratio(target, error, cfg))
}

/// Scale-dependent SDR: `10 log10(‖α r‖² / (‖r - e‖² + ε))`.
pub fn sd_sdr(est: &Waveform, reference: &Waveform, cfg: &MetricConfig) -> Result<f64> {
    let alpha = projection_scale(est, reference)?;
    let (mut target, mut error) = (0.0, 0.0);
    for (&e, &r) in est.samples().iter().zip(reference.samples()) {
        let r = r as f64;
        target += (alpha * r).powi(2);
        error += (r - e as f64).powi(2);
    }
    Ok(db_ratio(target, error, cfg))
}

fn frame_range(frame: usize, len: usize) -> std::ops::Range<usize> {
    let start = (frame * HOP).min(len);
    start..((frame + 1) * HOP).min(len)
}

/// Number of hop-aligned frames covering `len` samples.
pub fn n_frames(len: usize) -> usize {
    len.div_ceil(HOP)
}

/// Indices of the hop-aligned frames where `target` is silent.
pub fn silent_frames(target: &Waveform, cfg: &MetricConfig) -> Vec<usize> {
    let x = target.samples();
    (0..n_frames(x.len()))
        .filter(|&f| {
            let s = &x[frame_range(f, x.len())];
            dot(s, s) < cfg.silence_threshold
        })
        .collect()
}

/// Predicted energy at silence: mean square of `est` over the given frames.
pub fn pes(est: &Waveform, target_silent_frames: &[usize], cfg: &MetricConfig) -> Result<f64> {
    let x = est.samples();
    let mut total = 0.0;
    let mut count = 0usize;
    for &f in target_silent_frames {
        let s = &x[frame_range(f, x.len())];
        total += dot(s, s);
        count += s.len();
    }
    if count == 0 {
        return Err(Error::NoSilence);
    }
    Ok(cfg.clamp(10.0 * (total / count as f64 + cfg.eps).log10()))
}
