//! Mix-and-separate sample generation and the training schedules.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{invalid, Error, Result};
use crate::{NUM_INSTRUMENTS, SAMPLE_RATE, SEGMENT_SAMPLES};

/// Instrument classes in their fixed mask order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Instrument {
    Violin,
    Viola,
    Cello,
    DoubleBass,
    Flute,
    Oboe,
    Clarinet,
    Bassoon,
    Saxophone,
    Trumpet,
    Horn,
    Trombone,
    Tuba,
}

impl Instrument {
    pub const ALL: [Instrument; NUM_INSTRUMENTS] = [
        Instrument::Violin,
        Instrument::Viola,
        Instrument::Cello,
        Instrument::DoubleBass,
        Instrument::Flute,
        Instrument::Oboe,
        Instrument::Clarinet,
        Instrument::Bassoon,
        Instrument::Saxophone,
        Instrument::Trumpet,
        Instrument::Horn,
        Instrument::Trombone,
        Instrument::Tuba,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Instrument::Violin => "violin",
            Instrument::Viola => "viola",
            Instrument::Cello => "cello",
            Instrument::DoubleBass => "double_bass",
            Instrument::Flute => "flute",
            Instrument::Oboe => "oboe",
            Instrument::Clarinet => "clarinet",
            Instrument::Bassoon => "bassoon",
            Instrument::Saxophone => "saxophone",
            Instrument::Trumpet => "trumpet",
            Instrument::Horn => "horn",
            Instrument::Trombone => "trombone",
            Instrument::Tuba => "tuba",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Instrument {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        let key = if key == "doublebass" { "double_bass".to_string() } else { key };
        Self::ALL
            .iter()
            .copied()
            .find(|i| i.name() == key)
            .ok_or_else(|| invalid(format!("unknown instrument '{s}'")))
    }
}

/// Isolated recordings per instrument, all at the working sample rate.
#[derive(Debug, Clone, Default)]
pub struct SourceLibrary {
    recordings: BTreeMap<Instrument, Vec<Waveform>>,
}

impl SourceLibrary {
    pub fn new(recordings: BTreeMap<Instrument, Vec<Waveform>>) -> Result<Self> {
        for (inst, waves) in &recordings {
            if let Some(w) = waves.iter().find(|w| w.sample_rate() != SAMPLE_RATE) {
                return Err(invalid(format!(
                    "{inst} recording is at {} Hz, expected {SAMPLE_RATE} Hz",
                    w.sample_rate()
                )));
            }
            if waves.iter().any(Waveform::is_empty) {
                return Err(invalid(format!("{inst} has an empty recording")));
            }
        }
        let recordings = recordings.into_iter().filter(|(_, w)| !w.is_empty()).collect();
        Ok(Self { recordings })
    }

    pub fn instruments(&self) -> Vec<Instrument> {
        self.recordings.keys().copied().collect()
    }

    pub fn recordings(&self, inst: Instrument) -> &[Waveform] {
        self.recordings.get(&inst).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// A synthetic mixture with its ground-truth components.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub mixture: Waveform,
    /// One entry per instrument: the source exactly as it appears in the
    /// mixture (peak-normalized, divided by the number of sources), silent
    /// where absent. `mixture` is their sum in instrument order.
    pub sources: Vec<Waveform>,
    /// Binary presence vector in instrument order.
    pub labels: [f32; NUM_INSTRUMENTS],
    /// Where each present source was cut from, in instrument order.
    pub picks: Vec<SegmentPick>,
}

/// Recording index and start sample of one mixed segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SegmentPick {
    pub instrument: Instrument,
    pub recording: usize,
    pub start: usize,
}

impl MixtureSample {
    pub fn n_sources(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0.5).count()
    }

    pub fn present(&self) -> Vec<Instrument> {
        Instrument::ALL
            .iter()
            .copied()
            .filter(|i| self.labels[i.index()] > 0.5)
            .collect()
    }
}

const PEAK_GUARD: f32 = 1e-8;
const SILENT_RETRIES: usize = 5;

/// Returns `(recording, start, segment)`; short recordings are zero-padded.
fn pick_segment(rng: &mut ChaCha8Rng, recordings: &[Waveform]) -> (usize, usize, Vec<f32>) {
    let recording = rng.gen_range(0..recordings.len());
    let x = recordings[recording].samples();
    let mut seg = vec![0.0f32; SEGMENT_SAMPLES];
    let mut start = 0;
    if x.len() <= SEGMENT_SAMPLES {
        seg[..x.len()].copy_from_slice(x);
    } else {
        start = rng.gen_range(0..=x.len() - SEGMENT_SAMPLES);
        seg.copy_from_slice(&x[start..start + SEGMENT_SAMPLES]);
    }
    (recording, start, seg)
}

/// Peak-normalize a segment to `[-1, 1]`.
pub fn peak_normalize(seg: &mut [f32]) {
    let peak = seg.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    let scale = 1.0 / peak.max(PEAK_GUARD);
    seg.iter_mut().for_each(|s| *s *= scale);
}

/// Draw `n_sources` distinct instruments and mix one random segment of each.
pub fn sample_mixture(lib: &SourceLibrary, n_sources: usize, seed: u64) -> Result<MixtureSample> {
    if !(1..=MAX_SOURCES).contains(&n_sources) {
        return Err(invalid(format!("n_sources must be in 1..={MAX_SOURCES}, got {n_sources}")));
    }
    let available = lib.instruments();
    if available.len() < n_sources {
        return Err(invalid(format!(
            "library has {} instruments, {n_sources} requested",
            available.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<Instrument> = available.choose_multiple(&mut rng, n_sources).copied().collect();
    chosen.sort();

    let mut sources = vec![Waveform::zeros(SEGMENT_SAMPLES, SAMPLE_RATE); NUM_INSTRUMENTS];
    let mut labels = [0.0f32; NUM_INSTRUMENTS];
    let mut picks = Vec::with_capacity(n_sources);
    let divisor = n_sources as f32;
    for &inst in &chosen {
        let recordings = lib.recordings(inst);
        let (mut recording, mut start, mut seg) = pick_segment(&mut rng, recordings);
        for _ in 0..SILENT_RETRIES {
            if seg.iter().any(|s| s.abs() >= PEAK_GUARD) {
                break;
            }
            (recording, start, seg) = pick_segment(&mut rng, recordings);
        }
        picks.push(SegmentPick {
            instrument: inst,
            recording,
            start,
        });
        peak_normalize(&mut seg);
        seg.iter_mut().for_each(|s| *s /= divisor);
        sources[inst.index()] = Waveform::new(seg, SAMPLE_RATE)?;
        labels[inst.index()] = 1.0;
    }
    let mut mix = vec![0.0f32; SEGMENT_SAMPLES];
    for &inst in &chosen {
        for (m, &s) in mix.iter_mut().zip(sources[inst.index()].samples()) {
            *m += s;
        }
    }
    Ok(MixtureSample {
        mixture: Waveform::new(mix, SAMPLE_RATE)?,
        sources,
        labels,
        picks,
    })
}

pub const MIN_SOURCES: usize = 2;
pub const MAX_SOURCES: usize = 7;
pub const CURRICULUM_PATIENCE: u64 = 10_000;
pub const LR_PATIENCE: u64 = 25_000;
pub const INITIAL_LR: f64 = 1e-5;

/// Best validation loss seen and the number of iterations since it improved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    #[serde(with = "inf_as_null")]
    pub best_val_loss: f64,
    pub iterations_since_improvement: u64,
}

/// JSON has no infinity; the initial "no loss seen yet" is stored as null.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl Default for Plateau {
    fn default() -> Self {
        Self {
            best_val_loss: f64::INFINITY,
            iterations_since_improvement: 0,
        }
    }
}

impl Plateau {
    /// Record one iteration; true once `patience` stagnant iterations have
    /// accumulated, in which case the counter restarts.
    fn tick(&mut self, val_loss: f64, patience: u64) -> bool {
        if val_loss < self.best_val_loss {
            self.best_val_loss = val_loss;
            self.iterations_since_improvement = 0;
            return false;
        }
        self.iterations_since_improvement += 1;
        if self.iterations_since_improvement >= patience {
            self.iterations_since_improvement = 0;
            true
        } else {
            false
        }
    }
}

/// Curriculum and learning-rate state. The two machines keep separate
/// plateau counters so that a curriculum step never resets the LR patience.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub max_sources: usize,
    pub lr: f64,
    pub curriculum: Plateau,
    pub lr_plateau: Plateau,
}

impl ScheduleState {
    pub fn new(curriculum: bool, lr: f64) -> Self {
        Self {
            max_sources: if curriculum { MIN_SOURCES } else { MAX_SOURCES },
            lr,
            curriculum: Plateau::default(),
            lr_plateau: Plateau::default(),
        }
    }
}

/// Advance the curriculum by one iteration.
pub fn curriculum_step(mut state: ScheduleState, val_loss: f64) -> ScheduleState {
    if state.curriculum.tick(val_loss, CURRICULUM_PATIENCE) {
        state.max_sources = (state.max_sources + 1).min(MAX_SOURCES);
    }
    state
}

/// Advance the learning-rate plateau schedule by one iteration.
pub fn lr_step(mut state: ScheduleState, val_loss: f64) -> ScheduleState {
    if state.lr_plateau.tick(val_loss, LR_PATIENCE) {
        state.lr *= 0.5;
    }
    state
}
