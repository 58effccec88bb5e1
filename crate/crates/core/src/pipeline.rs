//! End-to-end drivers: the model front end, mask-based separation with the
//! Wiener post-filter, oracle separation, and visual feature alignment.

use serde::{Deserialize, Serialize};

use crate::dsp::{istft, scale_magnitude, stft, warp_freq_axis, FreqAxis, MagSpec, ValueScale, Waveform};
use crate::error::{invalid, Result};
use crate::io::FeatureFile;
use crate::masks::{apply_mask, ideal_binary_mask, ideal_ratio_mask, Mask, MaskKind};
use crate::model::{ContextInput, ContextKind, Model};
use crate::wiener::{wiener_filter, WienerConfig};
use crate::{NUM_INSTRUMENTS, SAMPLE_RATE, SEGMENT_SAMPLES};

/// Frames per source fed to motion conditioning.
pub const MOTION_FRAMES: usize = 5;

/// How magnitude spectrograms are presented to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrontEnd {
    pub freq_axis: FreqAxis,
    pub value_scale: ValueScale,
}

impl FrontEnd {
    /// Moves a linear magnitude onto the model's frequency grid, unscaled.
    fn on_grid(&self, mag: &MagSpec) -> Result<MagSpec> {
        match self.freq_axis {
            FreqAxis::Linear => Ok(mag.clone()),
            FreqAxis::Log => warp_freq_axis(mag, FreqAxis::Log),
        }
    }

    /// Network input for a linear mixture magnitude.
    pub fn model_input(&self, mix_mag: &MagSpec) -> Result<MagSpec> {
        let grid = self.on_grid(mix_mag)?;
        match self.value_scale {
            ValueScale::Linear => Ok(grid),
            mode => scale_magnitude(&grid, mode),
        }
    }

    /// Ideal masks on the model's frequency grid, one per instrument.
    pub fn targets(&self, source_mags: &[MagSpec], mix_mag: &MagSpec, kind: MaskKind) -> Result<Vec<Mask>> {
        if source_mags.len() != NUM_INSTRUMENTS {
            return Err(invalid(format!("expected {NUM_INSTRUMENTS} source magnitudes")));
        }
        let mix = self.on_grid(mix_mag)?;
        source_mags
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let s = self.on_grid(s)?;
                match kind {
                    MaskKind::Ratio => ideal_ratio_mask(&s, &mix, i),
                    MaskKind::Binary => ideal_binary_mask(&s, &mix, i),
                }
            })
            .collect()
    }

    /// Maps predicted masks back to the linear frequency grid.
    pub fn to_linear(&self, masks: Vec<Mask>) -> Result<Vec<Mask>> {
        if self.freq_axis == FreqAxis::Linear {
            return Ok(masks);
        }
        masks
            .into_iter()
            .map(|m| {
                let on_log = MagSpec {
                    values: m.values,
                    freq_axis: FreqAxis::Log,
                    value_scale: ValueScale::Linear,
                };
                let lin = warp_freq_axis(&on_log, FreqAxis::Linear)?;
                Mask::new(lin.values.mapv(|v| v.clamp(0.0, 1.0)), MaskKind::Ratio, m.instrument)
            })
            .collect()
    }
}

/// Splits a waveform into zero-padded segments of the model's input length.
fn segments(wave: &Waveform) -> Result<Vec<Waveform>> {
    if wave.sample_rate() != SAMPLE_RATE {
        return Err(invalid(format!("mixture must be at {SAMPLE_RATE} Hz, got {}", wave.sample_rate())));
    }
    if wave.is_empty() {
        return Err(invalid("empty mixture"));
    }
    wave.samples()
        .chunks(SEGMENT_SAMPLES)
        .map(|c| {
            let mut seg = c.to_vec();
            seg.resize(SEGMENT_SAMPLES, 0.0);
            Waveform::new(seg, SAMPLE_RATE)
        })
        .collect()
}

/// Separates a mixture into one waveform per model mask.
///
/// The mixture is processed in consecutive segments; `context` is called
/// with each segment's start sample and returns that segment's context.
pub fn separate(
    model: &Model,
    front: &FrontEnd,
    mixture: &Waveform,
    mut context: impl FnMut(usize) -> Result<Option<ContextInput>>,
    wiener: &WienerConfig,
) -> Result<Vec<Waveform>> {
    let k = model.config().n_masks;
    let mut out = vec![Vec::with_capacity(mixture.len() + SEGMENT_SAMPLES); k];
    for (s, seg) in segments(mixture)?.iter().enumerate() {
        let spec = stft(seg)?;
        let mag = spec.magnitude();
        let ctx = context(s * SEGMENT_SAMPLES)?;
        let masks = front.to_linear(model.predict(&front.model_input(&mag)?, ctx.as_ref())?)?;
        let est: Vec<MagSpec> = masks.iter().map(|m| MagSpec::linear(&m.values * &mag.values)).collect();
        for (i, x) in wiener_filter(&est, &spec, wiener)?.iter().enumerate() {
            out[i].extend_from_slice(istft(x, SEGMENT_SAMPLES)?.samples());
        }
    }
    out.into_iter()
        .map(|mut v| {
            v.truncate(mixture.len());
            Waveform::new(v, SAMPLE_RATE)
        })
        .collect()
}

/// Reconstructs each source with its ideal mask computed from the true stems.
pub fn oracle_separate(mixture: &Waveform, sources: &[Waveform], kind: MaskKind) -> Result<Vec<Waveform>> {
    let spec = stft(mixture)?;
    let mix_mag = spec.magnitude();
    sources
        .iter()
        .enumerate()
        .map(|(i, s)| {
            if s.len() != mixture.len() {
                return Err(invalid(format!("stem {i} has {} samples, mixture has {}", s.len(), mixture.len())));
            }
            let src_mag = stft(s)?.magnitude();
            let inst = i % NUM_INSTRUMENTS;
            let mask = match kind {
                MaskKind::Ratio => ideal_ratio_mask(&src_mag, &mix_mag, inst)?,
                MaskKind::Binary => ideal_binary_mask(&src_mag, &mix_mag, inst)?,
            };
            let y = apply_mask(&mask, &spec)?;
            Waveform::new(istft(&y, mixture.len())?.into_samples(), mixture.sample_rate())
        })
        .collect()
}

/// Frames of `source` covering samples `[start, start + len)` of a
/// recording of `total` samples, assuming the frames span the recording
/// evenly. At least one and at most [`MOTION_FRAMES`] frames, evenly spaced.
pub fn aligned_frames(ff: &FeatureFile, source: usize, start: usize, len: usize, total: usize) -> Result<Vec<Vec<f32>>> {
    if source >= ff.n_sources || ff.n_frames == 0 {
        return Err(invalid(format!("feature file has no frames for source {source}")));
    }
    let n = ff.n_frames;
    let total = total.max(1);
    let first = (start * n / total).min(n - 1);
    let end = ((start + len) * n).div_ceil(total).clamp(first + 1, n);
    let count = end - first;
    let picks: Vec<usize> = if count <= MOTION_FRAMES {
        (first..end).collect()
    } else {
        (0..MOTION_FRAMES).map(|i| first + i * (count - 1) / (MOTION_FRAMES - 1)).collect()
    };
    Ok(picks.into_iter().map(|t| ff.frame(source, t).to_vec()).collect())
}

/// Builds a visual or motion context from per-source frame sequences.
/// Visual conditioning uses the first frame of each source.
pub fn frames_context(kind: ContextKind, per_source: Vec<Vec<Vec<f32>>>) -> Result<ContextInput> {
    let ctx = match kind {
        ContextKind::Visual => ContextInput::Visual(
            per_source
                .into_iter()
                .map(|s| s.into_iter().next().ok_or_else(|| invalid("source without frames")))
                .collect::<Result<_>>()?,
        ),
        ContextKind::Motion(_) => ContextInput::Motion(per_source),
        other => return Err(invalid(format!("{other:?} context is not built from frames"))),
    };
    ctx.validate()?;
    Ok(ctx)
}
