//! The eighteen experiment configurations of the hyperparameter table.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dsp::{FreqAxis, ValueScale};
use crate::error::{invalid, Result};
use crate::losses::LossKind;
use crate::masks::MaskKind;
use crate::model::{Conditioning, ContextKind, Heads, MotionMode, UNetConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Unet,
    Mhunet,
}

impl ModelKind {
    pub fn heads(self) -> Heads {
        match self {
            Self::Unet => Heads::Single,
            Self::Mhunet => Heads::Multi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ExperimentPreset {
    pub id: u8,
    pub freq_axis: FreqAxis,
    pub value_scale: ValueScale,
    pub model: ModelKind,
    pub noise_augment: bool,
    pub mask: MaskKind,
    pub loss: LossKind,
    pub curriculum: bool,
    pub conditioning: Conditioning,
    pub context: ContextKind,
}

pub const NUM_PRESETS: u8 = 18;

const fn row(
    id: u8,
    freq_axis: FreqAxis,
    value_scale: ValueScale,
    model: ModelKind,
    noise_augment: bool,
    binary: bool,
    curriculum: bool,
    conditioning: Conditioning,
    context: ContextKind,
) -> ExperimentPreset {
    let (mask, loss) = if binary {
        (MaskKind::Binary, LossKind::Bce)
    } else {
        (MaskKind::Ratio, LossKind::L2)
    };
    ExperimentPreset {
        id,
        freq_axis,
        value_scale,
        model,
        noise_augment,
        mask,
        loss,
        curriculum,
        conditioning,
        context,
    }
}

use Conditioning as C;
use ContextKind as X;
use FreqAxis::{Linear as Lin, Log};
use ModelKind::{Mhunet, Unet};
use ValueScale::DbNorm as Db;

const LSTM: ContextKind = X::Motion(MotionMode::Lstm);
const MAXPOOL: ContextKind = X::Motion(MotionMode::Maxpool);

#[rustfmt::skip]
const PRESETS: [ExperimentPreset; NUM_PRESETS as usize] = [
    row(1, Log, Db, Unet, false, false, false, C::None, X::None),
    row(2, Log, Db, Unet, false, false, true, C::None, X::None),
    row(3, Log, Db, Unet, false, true, false, C::None, X::None),
    row(4, Log, Db, Unet, true, false, false, C::None, X::None),
    row(5, Log, ValueScale::Log, Unet, false, false, false, C::None, X::None),
    row(6, Lin, Db, Unet, false, false, false, C::None, X::None),
    row(7, Log, Db, Mhunet, false, false, false, C::None, X::None),
    row(8, Lin, Db, Unet, false, false, false, C::FilmBottleneck, X::Label),
    row(9, Lin, Db, Unet, false, false, false, C::FilmEncoder, X::Label),
    row(10, Lin, Db, Unet, false, false, false, C::FilmFinal, X::Label),
    row(11, Lin, Db, Unet, false, false, false, C::LabelMultiply, X::Label),
    row(12, Lin, Db, Unet, false, false, false, C::FilmEncoder, X::Visual),
    row(13, Lin, Db, Unet, false, false, false, C::FilmFinal, LSTM),
    row(14, Lin, Db, Unet, false, false, false, C::FilmBottleneck, LSTM),
    row(15, Lin, Db, Unet, false, false, false, C::FilmBottleneck, MAXPOOL),
    row(16, Lin, Db, Unet, false, false, false, C::FinalMultiply, X::Visual),
    row(17, Lin, Db, Unet, false, false, false, C::FilmBottleneck, X::Visual),
    row(18, Lin, Db, Unet, false, false, false, C::FilmFinal, X::Visual),
];

impl ExperimentPreset {
    pub fn get(id: u8) -> Result<Self> {
        PRESETS
            .iter()
            .find(|p| p.id == id)
            .copied()
            .ok_or_else(|| invalid(format!("preset must be 1..={NUM_PRESETS}, got {id}")))
    }

    pub fn all() -> &'static [ExperimentPreset] {
        &PRESETS
    }

    /// Full-size network configuration for this experiment.
    pub fn unet_config(&self) -> UNetConfig {
        UNetConfig {
            heads: self.model.heads(),
            conditioning: self.conditioning,
            context: self.context,
            ..UNetConfig::default()
        }
    }

    fn conditioning_label(&self) -> String {
        let site = match self.conditioning {
            C::None => return "None".into(),
            C::FilmBottleneck => "FiLM-bottleneck",
            C::FilmEncoder => "FiLM-encoder",
            C::FilmFinal => "FiLM-final",
            C::LabelMultiply => "Label-multiply",
            C::FinalMultiply => "Final-multiply",
        };
        match self.context {
            X::Label => format!("{site} (binary)"),
            X::Visual => format!("{site} (visual)"),
            X::Motion(MotionMode::Lstm) => format!("{site}-lstm (visual-motion)"),
            X::Motion(MotionMode::Maxpool) => format!("{site}-maxpool (visual-motion)"),
            X::None => site.into(),
        }
    }

    /// The row in the table's notation, cells separated by ` | `.
    pub fn table_row(&self) -> String {
        let yes_no = |b: bool| if b { "Yes" } else { "No" };
        let cells = [
            self.id.to_string(),
            match self.freq_axis {
                Lin => "linear",
                Log => "log",
            }
            .into(),
            match self.value_scale {
                ValueScale::Linear => "linear",
                ValueScale::Log => "log",
                Db => "dB-norm",
            }
            .into(),
            match self.model {
                Unet => "U-Net",
                Mhunet => "MHU-Net",
            }
            .into(),
            yes_no(self.noise_augment).into(),
            match self.mask {
                MaskKind::Ratio => "Ratio",
                MaskKind::Binary => "Binary",
            }
            .into(),
            match self.loss {
                LossKind::L2 => "L2",
                LossKind::Bce => "BCE",
            }
            .into(),
            yes_no(self.curriculum).into(),
            self.conditioning_label(),
        ];
        cells.join(" | ")
    }
}

impl fmt::Display for ExperimentPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.table_row())
    }
}
