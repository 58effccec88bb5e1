//! Conditioned single-channel music source separation.
//!
//! The crate covers the whole pipeline around a spectrogram-masking U-Net:
//!
//! - [`dsp`]: resampling, STFT/iSTFT, frequency warping and magnitude scaling
//! - [`masks`]: ideal ratio/binary masks and mask application
//! - [`mixgen`]: mix-and-separate sample generation plus curriculum and LR schedules
//! - [`autodiff`]: a small reverse-mode engine with the layers the model needs and Adam
//! - [`model`]: U-Net / multi-head U-Net with FiLM and multiplicative conditioning
//! - [`losses`]: weighted BCE and L2 mask objectives
//! - [`wiener`]: iterative single-channel Wiener post-filter
//! - [`metrics`]: SDR/SIR/SAR, SI-SDR, SD-SDR and PES
//! - [`io`], [`presets`], [`train`], [`pipeline`]: file formats, experiment presets and drivers
//! - [`synth`]: synthetic recordings for fixtures and smoke tests

pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod io;
pub mod losses;
pub mod masks;
pub mod metrics;
pub mod mixgen;
pub mod model;
pub mod pipeline;
pub mod presets;
pub mod synth;
pub mod train;
pub mod wiener;

pub use dsp::{ComplexSpec, FreqAxis, MagSpec, ValueScale, Waveform};
pub use error::{Error, Result};
pub use masks::{Mask, MaskKind};
pub use mixgen::{Instrument, MixtureSample, ScheduleState, SegmentPick, SourceLibrary};
pub use model::{ContextInput, ContextVector, Model, UNetConfig};

/// Canonical working sample rate in Hz.
pub const SAMPLE_RATE: u32 = 11025;
/// Segment length in samples (about six seconds at [`SAMPLE_RATE`]).
pub const SEGMENT_SAMPLES: usize = 65535;
/// Number of instrument classes, and therefore of predicted masks.
pub const NUM_INSTRUMENTS: usize = 13;
