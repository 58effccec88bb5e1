//! Mix-and-separate training with the curriculum and learning-rate
//! schedules, validation, logging and exactly resumable checkpoints.
//!
//! Every random draw is derived from the configured seed and the iteration
//! number, so a run resumed from a checkpoint follows the same trajectory
//! as an uninterrupted one.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::autodiff::{Adam, Graph, Tensor};
use crate::dsp::{stft, MagSpec, Waveform};
use crate::error::{invalid, Error, Result};
use crate::io::{read_features, FeatureFile, Manifest};
use crate::losses::{mask_loss, LossConfig, LossKind};
use crate::masks::{Mask, MaskKind};
use crate::mixgen::{curriculum_step, lr_step, sample_mixture, Instrument, MixtureSample, ScheduleState, SourceLibrary, MAX_SOURCES, MIN_SOURCES};
use crate::model::{Checkpoint, ContextInput, ContextKind, Model, UNetConfig};
use crate::pipeline::{aligned_frames, frames_context, FrontEnd};
use crate::presets::ExperimentPreset;
use crate::{NUM_INSTRUMENTS, SEGMENT_SAMPLES};

/// Noise augmentation standard deviation, relative to the mixture peak.
pub const NOISE_REL_STD: f32 = 0.01;

pub const LOG_COLUMNS: &str = "iteration,loss,val_loss,lr,max_sources";

/// Training configuration. Missing JSON fields take the values of preset 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub preset: Option<u8>,
    pub front: FrontEnd,
    pub model: UNetConfig,
    pub mask: MaskKind,
    pub loss: LossKind,
    /// BCE positive weight; estimated per batch when absent.
    pub lambda: Option<f64>,
    pub curriculum: bool,
    pub noise_augment: bool,
    pub batch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    /// Validation runs every this many iterations and on the first one.
    pub val_every: u64,
    pub val_size: usize,
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::from_preset(&ExperimentPreset::get(1).expect("preset 1 exists"))
    }
}

impl TrainConfig {
    pub fn from_preset(p: &ExperimentPreset) -> Self {
        Self {
            preset: Some(p.id),
            front: FrontEnd {
                freq_axis: p.freq_axis,
                value_scale: p.value_scale,
            },
            model: p.unet_config(),
            mask: p.mask,
            loss: p.loss,
            lambda: None,
            curriculum: p.curriculum,
            noise_augment: p.noise_augment,
            batch_size: 32,
            iterations: 1000,
            lr: crate::mixgen::INITIAL_LR,
            val_every: 100,
            val_size: 32,
            checkpoint_every: 1000,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss_config().validate()?;
        if self.model.n_masks != NUM_INSTRUMENTS {
            return Err(invalid(format!("training needs {NUM_INSTRUMENTS} masks")));
        }
        if self.loss == LossKind::Bce && self.mask != MaskKind::Binary {
            return Err(invalid("BCE trains against binary masks"));
        }
        if self.batch_size == 0 || self.val_size == 0 || self.val_every == 0 || self.checkpoint_every == 0 {
            return Err(invalid("batch_size, val_size, val_every and checkpoint_every must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda: self.lambda,
            ..LossConfig::new(self.loss)
        }
    }
}

/// First line of a training log: the experiment fields as JSON.
pub fn log_header(cfg: &TrainConfig) -> String {
    let model = match cfg.model.heads {
        crate::model::Heads::Single => "unet",
        crate::model::Heads::Multi => "mhunet",
    };
    let header = json!({
        "preset": cfg.preset,
        "freq_axis": cfg.front.freq_axis,
        "value_scale": cfg.front.value_scale,
        "model": model,
        "mask": cfg.mask,
        "loss": cfg.loss,
        "curriculum": cfg.curriculum,
        "noise_augment": cfg.noise_augment,
        "conditioning": cfg.model.conditioning,
        "context": cfg.model.context,
        "base_channels": cfg.model.base_channels,
        "batch_size": cfg.batch_size,
        "lr": cfg.lr,
        "seed": cfg.seed,
    });
    format!("# {header}\n{LOG_COLUMNS}\n")
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub iteration: u64,
    pub loss: f64,
    pub val_loss: f64,
    pub lr: f64,
    pub max_sources: usize,
}

impl StepRecord {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}\n", self.iteration, self.loss, self.val_loss, self.lr, self.max_sources)
    }
}

/// SplitMix64 over the parts, giving independent seeds per use site.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x243f_6a88_85a3_08d3u64;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

const SALT_MIX: u64 = 1;
const SALT_GRAPH: u64 = 2;
const SALT_NOISE: u64 = 3;
const SALT_VAL: u64 = 4;
const SALT_COUNT: u64 = 5;

/// Visual features per recording, loaded from a manifest.
#[derive(Debug, Clone, Default)]
pub struct FeatureBank {
    files: BTreeMap<(Instrument, usize), FeatureFile>,
}

impl FeatureBank {
    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let mut files = BTreeMap::new();
        for (&inst, entries) in &m.entries {
            for (r, e) in entries.iter().enumerate() {
                if let Some(p) = e.features() {
                    files.insert((inst, r), read_features(p)?);
                }
            }
        }
        Ok(Self { files })
    }

    pub fn insert(&mut self, inst: Instrument, recording: usize, f: FeatureFile) {
        self.files.insert((inst, recording), f);
    }

    pub fn get(&self, inst: Instrument, recording: usize) -> Option<&FeatureFile> {
        self.files.get(&(inst, recording))
    }
}

/// The context a model of `kind` sees for a generated mixture.
pub fn sample_context(
    kind: ContextKind,
    sample: &MixtureSample,
    lib: &SourceLibrary,
    bank: &FeatureBank,
) -> Result<Option<ContextInput>> {
    match kind {
        ContextKind::None => Ok(None),
        ContextKind::Label => Ok(Some(ContextInput::Label(sample.labels.to_vec()))),
        ContextKind::Visual | ContextKind::Motion(_) => {
            let per_source = sample
                .picks
                .iter()
                .map(|p| {
                    let ff = bank
                        .get(p.instrument, p.recording)
                        .ok_or_else(|| invalid(format!("no features for {} recording {}", p.instrument, p.recording)))?;
                    let total = lib.recordings(p.instrument)[p.recording].len();
                    aligned_frames(ff, 0, p.start, SEGMENT_SAMPLES, total)
                })
                .collect::<Result<Vec<_>>>()?;
            frames_context(kind, per_source).map(Some)
        }
    }
}

/// A network input with its ideal-mask targets.
#[derive(Debug, Clone)]
pub struct Example {
    pub input: MagSpec,
    pub target: Vec<Mask>,
    pub context: Option<ContextInput>,
}

/// Builds an example; `noise_seed` adds Gaussian noise to the mixture.
pub fn make_example(
    front: &FrontEnd,
    sample: &MixtureSample,
    mask: MaskKind,
    context: Option<ContextInput>,
    noise_seed: Option<u64>,
) -> Result<Example> {
    let mut mixture = sample.mixture.clone();
    if let Some(seed) = noise_seed {
        let std = NOISE_REL_STD * mixture.peak();
        if std > 0.0 {
            let normal = Normal::new(0.0, std).map_err(|e| invalid(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noisy = mixture.samples().iter().map(|&s| s + normal.sample(&mut rng)).collect();
            mixture = Waveform::new(noisy, mixture.sample_rate())?;
        }
    }
    let mix_mag = stft(&mixture)?.magnitude();
    let source_mags = sample
        .sources
        .iter()
        .map(|s| stft(s).map(|x| x.magnitude()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Example {
        input: front.model_input(&mix_mag)?,
        target: front.targets(&source_mags, &mix_mag, mask)?,
        context,
    })
}

fn batch_tensors(batch: &[&Example]) -> Result<(Tensor<f32>, Tensor<f32>, Vec<ContextInput>)> {
    let (f, t) = batch[0].input.shape();
    let k = batch[0].target.len();
    let mut x = Vec::with_capacity(batch.len() * f * t);
    let mut y = Vec::with_capacity(batch.len() * k * f * t);
    let mut ctx = Vec::new();
    for e in batch {
        if e.input.shape() != (f, t) || e.target.len() != k {
            return Err(invalid("examples in a batch differ in shape"));
        }
        x.extend(e.input.values.iter());
        for m in &e.target {
            y.extend(m.values.iter());
        }
        ctx.extend(e.context.clone());
    }
    Ok((
        Tensor::new(vec![batch.len(), 1, f, t], x)?,
        Tensor::new(vec![batch.len(), k, f, t], y)?,
        ctx,
    ))
}

fn scalar(g: &Graph<f32>, v: crate::autodiff::Var) -> f64 {
    g.value(v).data()[0] as f64
}

/// One optimizer update on a batch; returns the batch loss before the update.
pub fn train_step(model: &mut Model, adam: &mut Adam<f32>, batch: &[&Example], loss: &LossConfig, lr: f64, graph_seed: u64) -> Result<f64> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    let (x, y, ctx) = batch_tensors(batch)?;
    let mut g = Graph::new(true, graph_seed);
    let xv = g.input(x);
    let out = model.forward(&mut g, xv, &ctx)?;
    let l = mask_loss(&mut g, out, &y, loss)?;
    let value = scalar(&g, l);
    if !value.is_finite() {
        return Err(invalid(format!("training loss became {value}")));
    }
    g.backward(l)?;
    model.params_mut().zero_grads();
    g.accumulate_param_grads(model.params_mut());
    adam.step(model.params_mut(), lr)?;
    model.update_running_stats(&g)?;
    Ok(value)
}

/// Mean evaluation-mode loss per example.
pub fn eval_loss(model: &Model, examples: &[Example], loss: &LossConfig, batch_size: usize) -> Result<f64> {
    if examples.is_empty() {
        return Err(invalid("no evaluation examples"));
    }
    let mut total = 0.0;
    for chunk in examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let (x, y, ctx) = batch_tensors(&refs)?;
        let mut g = Graph::new(false, 0);
        let xv = g.input(x);
        let out = model.forward(&mut g, xv, &ctx)?;
        let l = mask_loss(&mut g, out, &y, loss)?;
        total += scalar(&g, l);
    }
    Ok(total / examples.len() as f64)
}

/// The training loop state.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    lib: &'a SourceLibrary,
    bank: &'a FeatureBank,
    model: Model,
    adam: Adam<f32>,
    schedule: ScheduleState,
    iteration: u64,
    last_val: f64,
    val: Vec<Example>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, lib: &'a SourceLibrary, bank: &'a FeatureBank) -> Result<Self> {
        cfg.validate()?;
        let model = Model::build(cfg.model, cfg.seed)?;
        let adam = Adam::new(model.params());
        let schedule = ScheduleState::new(cfg.curriculum, cfg.lr);
        Self::assemble(cfg, lib, bank, model, adam, schedule, 0, f64::INFINITY)
    }

    /// Continues a run from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, lib: &'a SourceLibrary, bank: &'a FeatureBank) -> Result<Self> {
        let bad = |what: &str| Error::FormatError(format!("checkpoint lacks training {what}"));
        let cfg: TrainConfig = serde_json::from_value(ckpt.meta.get("train").cloned().ok_or_else(|| bad("config"))?)?;
        cfg.validate()?;
        let schedule: ScheduleState =
            serde_json::from_value(ckpt.meta.get("schedule").cloned().ok_or_else(|| bad("schedule"))?)?;
        let iteration = ckpt.meta.get("iteration").and_then(Value::as_u64).ok_or_else(|| bad("iteration"))?;
        let last_val = ckpt.meta.get("last_val_loss").and_then(Value::as_f64).unwrap_or(f64::INFINITY);
        let (model, adam) = Model::from_checkpoint(ckpt)?;
        let adam = adam.ok_or_else(|| bad("optimizer state"))?;
        Self::assemble(cfg, lib, bank, model, adam, schedule, iteration, last_val)
    }

    #[allow(clippy::too_many_arguments)]
    fn assemble(
        cfg: TrainConfig,
        lib: &'a SourceLibrary,
        bank: &'a FeatureBank,
        model: Model,
        adam: Adam<f32>,
        schedule: ScheduleState,
        iteration: u64,
        last_val: f64,
    ) -> Result<Self> {
        if lib.instruments().is_empty() {
            return Err(invalid("source library is empty"));
        }
        let mut t = Self {
            cfg,
            lib,
            bank,
            model,
            adam,
            schedule,
            iteration,
            last_val,
            val: Vec::new(),
        };
        let cap = t.source_cap(MAX_SOURCES);
        t.val = (0..cfg.val_size as u64)
            .map(|i| {
                let n = t.draw_sources(cap, &[SALT_VAL, i]);
                t.example(n, derive_seed(&[cfg.seed, SALT_VAL, i]), None)
            })
            .collect::<Result<_>>()?;
        Ok(t)
    }

    fn source_cap(&self, max: usize) -> usize {
        max.min(self.lib.instruments().len())
    }

    /// Source count drawn uniformly from `2..=cap`.
    fn draw_sources(&self, cap: usize, salt: &[u64]) -> usize {
        let lo = MIN_SOURCES.min(cap);
        let mut key = vec![self.cfg.seed, SALT_COUNT];
        key.extend_from_slice(salt);
        ChaCha8Rng::seed_from_u64(derive_seed(&key)).gen_range(lo..=cap)
    }

    fn example(&self, n: usize, seed: u64, noise: Option<u64>) -> Result<Example> {
        let sample = sample_mixture(self.lib, n, seed)?;
        let ctx = sample_context(self.cfg.model.context, &sample, self.lib, self.bank)?;
        make_example(&self.cfg.front, &sample, self.cfg.mask, ctx, noise)
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Extends or shortens the run.
    pub fn set_iterations(&mut self, iterations: u64) {
        self.cfg.iterations = iterations;
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn schedule(&self) -> &ScheduleState {
        &self.schedule
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.cfg.iterations
    }

    pub fn validation_loss(&self) -> Result<f64> {
        eval_loss(&self.model, &self.val, &self.cfg.loss_config(), self.cfg.batch_size)
    }

    /// Runs one training iteration and advances the schedules.
    pub fn step(&mut self) -> Result<StepRecord> {
        let it = self.iteration + 1;
        let (seed, lr, max_sources) = (self.cfg.seed, self.schedule.lr, self.schedule.max_sources);
        let cap = self.source_cap(max_sources);
        let batch = (0..self.cfg.batch_size as u64)
            .map(|b| {
                let n = self.draw_sources(cap, &[it, b]);
                let noise = self.cfg.noise_augment.then(|| derive_seed(&[seed, SALT_NOISE, it, b]));
                self.example(n, derive_seed(&[seed, SALT_MIX, it, b]), noise)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Example> = batch.iter().collect();
        let loss_cfg = self.cfg.loss_config();
        let loss = train_step(&mut self.model, &mut self.adam, &refs, &loss_cfg, lr, derive_seed(&[seed, SALT_GRAPH, it]))?;
        self.iteration = it;
        if it == 1 || it.is_multiple_of(self.cfg.val_every) {
            self.last_val = self.validation_loss()?;
        }
        if self.cfg.curriculum {
            self.schedule = curriculum_step(self.schedule, self.last_val);
        }
        self.schedule = lr_step(self.schedule, self.last_val);
        Ok(StepRecord {
            iteration: it,
            loss,
            val_loss: self.last_val,
            lr,
            max_sources,
        })
    }

    /// Steps until the configured iteration count, calling `on_step` after each.
    pub fn run(&mut self, mut on_step: impl FnMut(&Self, &StepRecord) -> Result<()>) -> Result<()> {
        while !self.is_done() {
            let rec = self.step()?;
            on_step(self, &rec)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let last_val = if self.last_val.is_finite() { Some(self.last_val) } else { None };
        let meta = json!({
            "train": self.cfg,
            "schedule": self.schedule,
            "iteration": self.iteration,
            "last_val_loss": last_val,
        });
        self.model.to_checkpoint(Some(&self.adam), meta)
    }
}

/// The front end a checkpoint was trained with, defaulting to preset 1's.
pub fn checkpoint_front_end(ckpt: &Checkpoint) -> Result<FrontEnd> {
    match ckpt.meta.get("train") {
        Some(t) => Ok(serde_json::from_value::<TrainConfig>(t.clone())?.front),
        None => Ok(TrainConfig::default().front),
    }
}
