use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use cunet::io::{atomic_write, read_features, read_labels, write_labels, write_wav, LabelFile, Manifest};
use cunet::metrics::{evaluate_piece, MetricConfig};
use cunet::mixgen::sample_mixture;
use cunet::model::{read_checkpoint, write_checkpoint, Conditioning, ContextKind};
use cunet::pipeline::{aligned_frames, frames_context, oracle_separate, separate as run_separation};
use cunet::presets::ExperimentPreset;
use cunet::train::{checkpoint_front_end, log_header, FeatureBank, TrainConfig, Trainer};
use cunet::wiener::WienerConfig;
use cunet::{ContextInput, MaskKind, Model, NUM_INSTRUMENTS, SEGMENT_SAMPLES};

use crate::stems::{read_audio, read_stems, write_stems};
use crate::{usage, ConditioningArg, EvalArgs, MaskArg, OracleArgs, SeparateArgs, SynthArgs, TrainArgs, SEED_ENV};

/// `--seed`, else `$CUNET_SEED`, else `None`.
fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer"))?)),
        Err(_) => Ok(None),
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let seed = resolve_seed(a.seed)?.unwrap_or(0);
    let manifest = Manifest::read(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let lib = manifest.load_library()?;
    let sample = sample_mixture(&lib, a.sources, seed)?;
    write_stems(&a.out_dir, &sample.sources)?;
    write_wav(&a.out_dir.join("mixture.wav"), &sample.mixture)?;
    let present = sample.present();
    write_labels(&a.out_dir.join("labels.json"), &LabelFile::from_instruments(&present))?;
    let names: Vec<&str> = present.iter().map(|i| i.name()).collect();
    println!("wrote {} ({})", a.out_dir.display(), names.join(", "));
    Ok(())
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = match (&a.config, a.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, id) => {
            let id = id.unwrap_or(1);
            let preset = ExperimentPreset::get(id).map_err(|e| usage(e.to_string()))?;
            TrainConfig::from_preset(&preset)
        }
    };
    let o = &a.overrides;
    if let Some(v) = a.iterations {
        cfg.iterations = v;
    }
    if let Some(v) = o.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = o.lr {
        cfg.lr = v;
    }
    if let Some(v) = o.base_channels {
        cfg.model.base_channels = v;
    }
    if let Some(v) = o.val_every {
        cfg.val_every = v;
    }
    if let Some(v) = o.val_size {
        cfg.val_size = v;
    }
    if let Some(v) = o.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    if let Some(v) = resolve_seed(o.seed)? {
        cfg.seed = v;
    }
    Ok(cfg)
}

/// Keeps the header and the rows up to `iteration` of an existing log.
fn truncated_log(text: &str, iteration: u64) -> String {
    let mut out = String::new();
    for line in text.lines() {
        let keep = match line.split(',').next().and_then(|f| f.parse::<u64>().ok()) {
            Some(it) => it <= iteration,
            None => true,
        };
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

pub fn train(a: TrainArgs) -> Result<()> {
    let manifest = Manifest::read(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let lib = manifest.load_library()?;
    let bank = FeatureBank::from_manifest(&manifest)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("csv"));

    let (mut trainer, mut log) = match &a.resume {
        Some(path) => {
            let ckpt = read_checkpoint(path).with_context(|| format!("reading {}", path.display()))?;
            let mut t = Trainer::resume(&ckpt, &lib, &bank)?;
            if let Some(n) = a.iterations {
                t.set_iterations(n);
            }
            let log = match fs::read_to_string(&log_path) {
                Ok(text) => truncated_log(&text, t.iteration()),
                Err(_) => log_header(t.config()),
            };
            (t, log)
        }
        None => {
            let cfg = train_config(&a)?;
            (Trainer::new(cfg, &lib, &bank)?, log_header(&cfg))
        }
    };

    let save = |t: &Trainer, log: &str| -> Result<()> {
        write_checkpoint(&a.out, &t.checkpoint()?).with_context(|| format!("writing {}", a.out.display()))?;
        atomic_write(&log_path, log.as_bytes()).with_context(|| format!("writing {}", log_path.display()))?;
        Ok(())
    };
    let (total, every, val_every) = {
        let c = trainer.config();
        (c.iterations, c.checkpoint_every, c.val_every)
    };
    trainer.run(|t, rec| {
        log.push_str(&rec.csv_row());
        if !a.quiet && (rec.iteration == 1 || rec.iteration % val_every == 0 || rec.iteration == total) {
            eprintln!(
                "iteration {}/{total}: loss {:.6}, val loss {:.6}, lr {:e}, max sources {}",
                rec.iteration, rec.loss, rec.val_loss, rec.lr, rec.max_sources
            );
        }
        if rec.iteration % every == 0 {
            save(t, &log).map_err(|e| cunet::Error::InvalidInput(format!("{e:#}")))?;
        }
        Ok(())
    })?;
    save(&trainer, &log)?;
    println!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(())
}

pub fn separate(a: SeparateArgs) -> Result<()> {
    let mut ckpt = read_checkpoint(&a.checkpoint).with_context(|| format!("reading {}", a.checkpoint.display()))?;
    let front = checkpoint_front_end(&ckpt)?;
    if a.conditioning == ConditioningArg::LabelMultiply {
        match ckpt.config.conditioning {
            Conditioning::LabelMultiply => {}
            // Label multiplication adds no weights, so any unconditioned model can use it.
            Conditioning::None => {
                ckpt.config.conditioning = Conditioning::LabelMultiply;
                ckpt.config.context = ContextKind::Label;
            }
            other => return Err(usage(format!("a {other:?} checkpoint cannot use label-multiply conditioning"))),
        }
    }
    let (model, _) = Model::from_checkpoint(&ckpt)?;
    if model.config().n_masks != NUM_INSTRUMENTS {
        bail!("checkpoint has {} masks, expected {NUM_INSTRUMENTS}", model.config().n_masks);
    }
    let mixture = read_audio(&a.mixture)?;
    let wiener = WienerConfig::new(a.wiener);
    let kind = model.config().context;
    let stems = match kind {
        ContextKind::None => run_separation(&model, &front, &mixture, |_| Ok(None), &wiener)?,
        ContextKind::Label => {
            let path = a.labels.as_ref().ok_or_else(|| usage("this model needs --labels"))?;
            let labels = read_labels(path).with_context(|| format!("reading {}", path.display()))?;
            let ctx = ContextInput::Label(labels);
            run_separation(&model, &front, &mixture, |_| Ok(Some(ctx.clone())), &wiener)?
        }
        ContextKind::Visual | ContextKind::Motion(_) => {
            let path = a.features.as_ref().ok_or_else(|| usage("this model needs --features"))?;
            let ff = read_features(path).with_context(|| format!("reading {}", path.display()))?;
            let total = mixture.len();
            run_separation(
                &model,
                &front,
                &mixture,
                |start| {
                    let per_source = (0..ff.n_sources)
                        .map(|s| aligned_frames(&ff, s, start, SEGMENT_SAMPLES, total))
                        .collect::<cunet::Result<Vec<_>>>()?;
                    frames_context(kind, per_source).map(Some)
                },
                &wiener,
            )?
        }
    };
    write_stems(&a.out_dir, &stems)?;
    println!("wrote {} stems to {}", stems.len(), a.out_dir.display());
    Ok(())
}

fn present_labels(labels: Option<&Path>, refs: &[cunet::Waveform]) -> Result<Vec<f32>> {
    match labels {
        Some(path) => read_labels(path).with_context(|| format!("reading {}", path.display())),
        None => Ok(refs
            .iter()
            .map(|w| if w.samples().iter().any(|&v| v != 0.0) { 1.0 } else { 0.0 })
            .collect()),
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    if a.taps == 0 {
        return Err(usage("--taps must be positive"));
    }
    let refs = read_stems(&a.references, None)?;
    let ests = read_stems(&a.estimates, Some(refs[0].len()))?;
    let labels = present_labels(a.labels.as_deref(), &refs)?;
    let cfg = MetricConfig {
        proj_filter_len: a.taps,
        ..MetricConfig::default()
    };
    let report = evaluate_piece(&a.piece, &ests, &refs, &labels, &cfg)?;
    if let Some(path) = &a.csv {
        atomic_write(path, report.to_csv().as_bytes()).with_context(|| format!("writing {}", path.display()))?;
    }
    let json = report.aggregate_json()?;
    match &a.json {
        Some(path) => atomic_write(path, json.as_bytes()).with_context(|| format!("writing {}", path.display()))?,
        None if a.csv.is_none() => println!("{json}"),
        None => {}
    }
    Ok(())
}

pub fn oracle(a: OracleArgs) -> Result<()> {
    let mixture = read_audio(&a.mixture)?;
    let refs = read_stems(&a.stems, Some(mixture.len()))?;
    let kind = match a.mask {
        MaskArg::Irm => MaskKind::Ratio,
        MaskArg::Ibm => MaskKind::Binary,
    };
    let stems = oracle_separate(&mixture, &refs, kind)?;
    write_stems(&a.out_dir, &stems)?;
    println!("wrote {} stems to {}", stems.len(), a.out_dir.display());
    Ok(())
}
