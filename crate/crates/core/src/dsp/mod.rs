//! Deterministic signal-processing kernels.
//!
//! Everything here is a pure function of its inputs. Spectrograms are stored
//! frequency-major as `(F, T)` arrays.

mod resample;
mod stft;
mod warp;

pub use resample::{resample, Resampler};
pub use stft::{istft, stft, window_energy_constant, HOP, N_BINS, N_FFT};
pub use warp::{log_grid_positions, scale_magnitude, warp_freq_axis, DB_FLOOR, DB_RANGE};

use ndarray::Array2;
use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

/// Complex STFT of a waveform, `(F, T)` with `F = n_fft / 2 + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpec {
    pub bins: Array2<Complex32>,
    pub n_fft: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl ComplexSpec {
    pub fn n_bins(&self) -> usize {
        self.bins.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.bins.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.bins.dim()
    }

    /// Linear-scale magnitude on the linear frequency axis.
    pub fn magnitude(&self) -> MagSpec {
        MagSpec {
            values: self.bins.mapv(|c| c.norm()),
            freq_axis: FreqAxis::Linear,
            value_scale: ValueScale::Linear,
        }
    }

    /// Same parameters, new bins.
    pub fn with_bins(&self, bins: Array2<Complex32>) -> Self {
        Self {
            bins,
            n_fft: self.n_fft,
            hop: self.hop,
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqAxis {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueScale {
    Linear,
    Log,
    DbNorm,
}

/// Real-valued magnitude spectrogram tagged with its frequency axis and value scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MagSpec {
    pub values: Array2<f32>,
    pub freq_axis: FreqAxis,
    pub value_scale: ValueScale,
}

impl MagSpec {
    pub fn linear(values: Array2<f32>) -> Self {
        Self {
            values,
            freq_axis: FreqAxis::Linear,
            value_scale: ValueScale::Linear,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn max(&self) -> f32 {
        self.values.iter().fold(0.0f32, |m, &v| m.max(v))
    }
}
