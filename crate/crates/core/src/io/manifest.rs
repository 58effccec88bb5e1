use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{atomic_write, read_wav};
use crate::dsp::resample;
use crate::error::{invalid, Result};
use crate::mixgen::{Instrument, SourceLibrary};
use crate::{NUM_INSTRUMENTS, SAMPLE_RATE};

/// One recording: a WAV path, optionally with a feature file covering it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ManifestEntry {
    Wav(PathBuf),
    WithFeatures { wav: PathBuf, features: Option<PathBuf> },
}

impl ManifestEntry {
    pub fn wav(&self) -> &Path {
        match self {
            Self::Wav(p) | Self::WithFeatures { wav: p, .. } => p,
        }
    }

    pub fn features(&self) -> Option<&Path> {
        match self {
            Self::Wav(_) => None,
            Self::WithFeatures { features, .. } => features.as_deref(),
        }
    }
}

/// Instrument name to recordings. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Manifest {
    pub entries: BTreeMap<Instrument, Vec<ManifestEntry>>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl Manifest {
    /// Parses the manifest and makes every path absolute or relative to the
    /// working directory.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for entry in m.entries.values_mut().flatten() {
            *entry = match entry {
                ManifestEntry::Wav(p) => ManifestEntry::Wav(resolve(base, p)),
                ManifestEntry::WithFeatures { wav, features } => ManifestEntry::WithFeatures {
                    wav: resolve(base, wav),
                    features: features.as_deref().map(|f| resolve(base, f)),
                },
            };
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        atomic_write(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// Loads every recording, resampled to the working rate.
    pub fn load_library(&self) -> Result<SourceLibrary> {
        let mut recordings = BTreeMap::new();
        for (&inst, entries) in &self.entries {
            let waves = entries
                .iter()
                .map(|e| {
                    let w = read_wav(e.wav())?;
                    if w.sample_rate() == SAMPLE_RATE {
                        Ok(w)
                    } else {
                        resample(&w, SAMPLE_RATE)
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            recordings.insert(inst, waves);
        }
        SourceLibrary::new(recordings)
    }

    /// Feature path of the given recording, if any.
    pub fn features(&self, inst: Instrument, recording: usize) -> Option<&Path> {
        self.entries.get(&inst)?.get(recording)?.features()
    }
}

/// Presence labels of a mixture, as written by `synth` and read by `separate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelFile {
    pub instruments: Vec<Instrument>,
    pub labels: Vec<f32>,
}

impl LabelFile {
    pub fn from_instruments(instruments: &[Instrument]) -> Self {
        let mut labels = vec![0.0; NUM_INSTRUMENTS];
        for i in instruments {
            labels[i.index()] = 1.0;
        }
        Self {
            instruments: instruments.to_vec(),
            labels,
        }
    }
}

pub fn write_labels(path: &Path, labels: &LabelFile) -> Result<()> {
    atomic_write(path, serde_json::to_string_pretty(labels)?.as_bytes())
}

/// Accepts either a [`LabelFile`] object or a bare array of 13 values.
pub fn read_labels(path: &Path) -> Result<Vec<f32>> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Any {
        File(LabelFile),
        Bare(Vec<f32>),
    }
    let labels = match serde_json::from_str::<Any>(&std::fs::read_to_string(path)?)? {
        Any::File(f) => f.labels,
        Any::Bare(v) => v,
    };
    if labels.len() != NUM_INSTRUMENTS || labels.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(invalid(format!("labels must be {NUM_INSTRUMENTS} binary values")));
    }
    Ok(labels)
}
