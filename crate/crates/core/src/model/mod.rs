//! U-Net and multi-head U-Net mask estimators with label and visual
//! conditioning.
//!
//! The encoder has six stride-2 blocks; each decoder mirrors it with
//! bilinear up-sampling blocks fed by skip connections. Conditioning either
//! modulates activations with FiLM coefficients generated from a context
//! vector, or multiplies the output masks by per-instrument weights.

mod checkpoint;
mod context;
mod net;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use context::{condition_masks_multiply, motion_maxpool_context, pool_visual_context, ContextInput, ContextVector};
pub use net::{FilmLayer, FilmParams, FilmSite, Model};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::NUM_INSTRUMENTS;

/// Length of one per-frame visual feature vector.
pub const VISUAL_FEATURE_DIM: usize = 2048;
/// Length of visual and motion context vectors, and the LSTM hidden size.
pub const CONTEXT_DIM: usize = 1024;
/// Upper bound on sources contributing visual features.
pub const MAX_CONTEXT_SOURCES: usize = 7;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heads {
    /// One decoder emitting all masks.
    Single,
    /// One decoder per instrument, each emitting one mask.
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conditioning {
    None,
    FilmBottleneck,
    FilmEncoder,
    FilmFinal,
    LabelMultiply,
    FinalMultiply,
}

impl Conditioning {
    pub fn is_film(self) -> bool {
        matches!(self, Self::FilmBottleneck | Self::FilmEncoder | Self::FilmFinal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionMode {
    Lstm,
    Maxpool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    None,
    /// Binary presence vector.
    Label,
    /// One feature vector per source, pooled to `CONTEXT_DIM`.
    Visual,
    /// A feature sequence per source, aggregated by `MotionMode`.
    Motion(MotionMode),
}

impl ContextKind {
    /// Length of the pooled context vector.
    pub fn dim(self) -> usize {
        match self {
            Self::None => 0,
            Self::Label => NUM_INSTRUMENTS,
            Self::Visual | Self::Motion(_) => CONTEXT_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub blocks: usize,
    /// Channels of the first encoder block; each block doubles them.
    pub base_channels: usize,
    pub n_masks: usize,
    pub heads: Heads,
    pub conditioning: Conditioning,
    pub context: ContextKind,
    pub dropout: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            blocks: 6,
            base_channels: 16,
            n_masks: NUM_INSTRUMENTS,
            heads: Heads::Single,
            conditioning: Conditioning::None,
            context: ContextKind::None,
            dropout: 0.2,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks != 6 {
            return Err(invalid(format!("the network has 6 blocks, got {}", self.blocks)));
        }
        if self.base_channels == 0 {
            return Err(invalid("base_channels must be positive"));
        }
        if self.n_masks == 0 {
            return Err(invalid("n_masks must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let ok = match self.conditioning {
            Conditioning::None => self.context == ContextKind::None,
            Conditioning::LabelMultiply => self.context == ContextKind::Label && self.n_masks == NUM_INSTRUMENTS,
            _ => self.context != ContextKind::None,
        };
        if !ok {
            return Err(invalid(format!(
                "conditioning {:?} cannot use context {:?}",
                self.conditioning, self.context
            )));
        }
        Ok(())
    }

    /// Channel count of encoder block `j` (0-based).
    pub fn channels(&self, j: usize) -> usize {
        self.base_channels << j
    }

    /// Input frequency and time sizes must be divisible by this.
    pub fn size_multiple(&self) -> usize {
        1 << self.blocks
    }
}
