//! Ground-truth mask construction and mask application with mixture phase.

use ndarray::{Array2, Zip};
use num_complex::Complex32;
use serde::{Deserialize, Serialize};

use crate::dsp::{ComplexSpec, MagSpec, ValueScale};
use crate::error::{invalid, Result};
use crate::NUM_INSTRUMENTS;

/// Stabilizer in the ratio-mask denominator.
const IRM_EPS: f32 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Ratio,
    Binary,
}

/// A time-frequency mask for one instrument, `(F, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub values: Array2<f32>,
    pub kind: MaskKind,
    pub instrument: usize,
}

impl Mask {
    pub fn new(values: Array2<f32>, kind: MaskKind, instrument: usize) -> Result<Self> {
        if instrument >= NUM_INSTRUMENTS {
            return Err(invalid(format!("instrument index {instrument} out of range")));
        }
        let ok = match kind {
            MaskKind::Ratio => values.iter().all(|v| (0.0..=1.0).contains(v)),
            MaskKind::Binary => values.iter().all(|&v| v == 0.0 || v == 1.0),
        };
        if !ok {
            return Err(invalid(format!("mask values violate the {kind:?} range")));
        }
        Ok(Self {
            values,
            kind,
            instrument,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.dim()
    }
}

fn check_pair(source: &MagSpec, mix: &MagSpec) -> Result<()> {
    if source.value_scale != ValueScale::Linear || mix.value_scale != ValueScale::Linear {
        return Err(invalid("ideal masks need linear-scale magnitudes"));
    }
    if source.shape() != mix.shape() {
        return Err(invalid(format!(
            "source shape {:?} differs from mixture shape {:?}",
            source.shape(),
            mix.shape()
        )));
    }
    Ok(())
}

/// `|X| / (|Y| + 1e-8)`, clamped to `[0, 1]`.
pub fn ideal_ratio_mask(source_mag: &MagSpec, mix_mag: &MagSpec, instrument: usize) -> Result<Mask> {
    check_pair(source_mag, mix_mag)?;
    let values = Zip::from(&source_mag.values)
        .and(&mix_mag.values)
        .map_collect(|&x, &y| (x / (y + IRM_EPS)).clamp(0.0, 1.0));
    Mask::new(values, MaskKind::Ratio, instrument)
}

/// 1 where the source is at least as loud as the residual `|Y| - |X|`.
pub fn ideal_binary_mask(source_mag: &MagSpec, mix_mag: &MagSpec, instrument: usize) -> Result<Mask> {
    check_pair(source_mag, mix_mag)?;
    let values = Zip::from(&source_mag.values)
        .and(&mix_mag.values)
        .map_collect(|&x, &y| {
            let residual = y - x;
            if residual <= 0.0 || x / residual >= 1.0 {
                1.0
            } else {
                0.0
            }
        });
    Mask::new(values, MaskKind::Binary, instrument)
}

/// Scale the mixture magnitude by `mask`, keeping the mixture phase.
pub fn apply_mask(mask: &Mask, mixture: &ComplexSpec) -> Result<ComplexSpec> {
    apply_gain(&mask.values, mixture)
}

/// Like [`apply_mask`] for an arbitrary real gain map.
pub fn apply_gain(gain: &Array2<f32>, mixture: &ComplexSpec) -> Result<ComplexSpec> {
    if gain.dim() != mixture.shape() {
        return Err(invalid(format!(
            "mask shape {:?} differs from mixture shape {:?}",
            gain.dim(),
            mixture.shape()
        )));
    }
    // M |Y| exp(j angle(Y)) is M * Y for a real mask.
    let bins = Zip::from(gain)
        .and(&mixture.bins)
        .map_collect(|&m, &y| Complex32::new(m * y.re, m * y.im));
    Ok(mixture.with_bins(bins))
}
