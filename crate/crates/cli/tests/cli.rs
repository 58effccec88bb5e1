use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use cunet::io::{read_wav, write_wav};
use cunet::synth::instrument_recording;
use cunet::Instrument;
use cunet_cli::{run, EXIT_USAGE};
use serde_json::Value;
use tempfile::TempDir;

const FIXTURE: [Instrument; 3] = [Instrument::Violin, Instrument::Flute, Instrument::Trombone];

/// Writes one synthetic recording per fixture instrument and a manifest.
fn fixture() -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = serde_json::Map::new();
    for (k, inst) in FIXTURE.iter().enumerate() {
        let name = format!("{}.wav", inst.name());
        write_wav(&dir.path().join(&name), &instrument_recording(*inst, 80_000, k as u64).unwrap()).unwrap();
        entries.insert(inst.name().into(), Value::from(vec![name]));
    }
    let manifest = dir.path().join("manifest.json");
    fs::write(&manifest, Value::Object(entries).to_string()).unwrap();
    (dir, manifest)
}

fn cli(args: &[&str]) -> i32 {
    run(std::iter::once("cunet-cli").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(manifest: &Path, out: &Path, seed: &str) {
    assert_eq!(cli(&["synth", "--manifest", p(manifest), "--out-dir", p(out), "--seed", seed]), 0);
}

fn labels(dir: &Path) -> Vec<f32> {
    let v: Value = serde_json::from_str(&fs::read_to_string(dir.join("labels.json")).unwrap()).unwrap();
    v["labels"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap() as f32).collect()
}

fn tiny_train(manifest: &Path, ckpt: &Path, iterations: &str, extra: &[&str]) -> i32 {
    let mut args = vec![
        "train",
        "--manifest",
        p(manifest),
        "--out",
        p(ckpt),
        "--iterations",
        iterations,
        "--batch-size",
        "1",
        "--val-size",
        "1",
        "--val-every",
        "1",
        "--base-channels",
        "2",
        "--lr",
        "1e-3",
        "--quiet",
    ];
    args.extend_from_slice(extra);
    cli(&args)
}

#[test]
fn usage_errors_exit_with_two() {
    let bin = env!("CARGO_BIN_EXE_cunet-cli");
    for args in [
        vec!["frobnicate"],
        vec!["oracle", "--mixture", "m.wav"],
        vec!["oracle", "--mixture", "m.wav", "--stems", "s", "--out-dir", "o", "--mask", "soft"],
        vec!["train", "--manifest", "m.json", "--out", "c.cunw", "--preset", "1", "--resume", "c.cunw"],
    ] {
        let status = Command::new(bin).args(&args).output().unwrap().status;
        assert_eq!(status.code(), Some(EXIT_USAGE), "{args:?}");
    }
    let (_dir, manifest) = fixture();
    assert_eq!(cli(&["train", "--manifest", p(&manifest), "--out", "x.cunw", "--preset", "19"]), EXIT_USAGE);
}

#[test]
fn module_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(cli(&["synth", "--manifest", p(&missing), "--out-dir", p(dir.path())]), 1);
}

#[test]
fn oracle_irm_then_eval_beats_ten_db() {
    let (dir, manifest) = fixture();
    let piece = dir.path().join("piece");
    synth(&manifest, &piece, "4");
    let out = dir.path().join("oracle");
    assert_eq!(
        cli(&["oracle", "--mixture", p(&piece.join("mixture.wav")), "--stems", p(&piece), "--out-dir", p(&out), "--mask", "irm"]),
        0
    );
    let csv = dir.path().join("report.csv");
    let json = dir.path().join("report.json");
    let labels_path = piece.join("labels.json");
    assert_eq!(
        cli(&[
            "eval",
            "--estimates",
            p(&out),
            "--references",
            p(&piece),
            "--labels",
            p(&labels_path),
            "--csv",
            p(&csv),
            "--json",
            p(&json),
        ]),
        0
    );
    let rows = fs::read_to_string(&csv).unwrap();
    let si: Vec<f64> = rows
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(3) == Some("SI-SDR"))
        .map(|l| l.rsplit(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(si.len(), 2, "{rows}");
    assert!(si.iter().all(|&v| v > 10.0), "{si:?}");
    let agg: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert!(agg["per_instrument"].is_object());
}

#[test]
fn oracle_ibm_runs() {
    let (dir, manifest) = fixture();
    let piece = dir.path().join("piece");
    synth(&manifest, &piece, "1");
    let out = dir.path().join("ibm");
    assert_eq!(
        cli(&["oracle", "--mixture", p(&piece.join("mixture.wav")), "--stems", p(&piece), "--out-dir", p(&out), "--mask", "ibm"]),
        0
    );
    assert_eq!(fs::read_dir(&out).unwrap().count(), 13);
}

#[test]
fn synth_train_separate_eval_end_to_end() {
    let (dir, manifest) = fixture();
    let piece = dir.path().join("piece");
    synth(&manifest, &piece, "2");
    assert_eq!(labels(&piece).iter().sum::<f32>(), 2.0);

    let ckpt = dir.path().join("model.cunw");
    assert_eq!(tiny_train(&manifest, &ckpt, "2", &["--preset", "1"]), 0);
    let log = fs::read_to_string(dir.path().join("model.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert!(lines[0].starts_with("# {"));
    assert_eq!(lines[1], "iteration,loss,val_loss,lr,max_sources");
    assert_eq!(lines.len(), 4, "{log}");

    let est = dir.path().join("est");
    assert_eq!(
        cli(&[
            "separate",
            "--checkpoint",
            p(&ckpt),
            "--mixture",
            p(&piece.join("mixture.wav")),
            "--out-dir",
            p(&est),
            "--wiener",
            "1",
        ]),
        0
    );
    let mix_len = read_wav(&piece.join("mixture.wav")).unwrap().len();
    assert_eq!(read_wav(&est.join("violin.wav")).unwrap().len(), mix_len);

    let json = dir.path().join("eval.json");
    assert_eq!(
        cli(&["eval", "--estimates", p(&est), "--references", p(&piece), "--taps", "16", "--json", p(&json)]),
        0
    );
    let agg: Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert!(agg["per_n_sources"]["2"]["SDR"].is_object(), "{agg}");
}

#[test]
fn label_multiply_silences_absent_stems() {
    let (dir, manifest) = fixture();
    let piece = dir.path().join("piece");
    synth(&manifest, &piece, "3");
    let ckpt = dir.path().join("model.cunw");
    assert_eq!(tiny_train(&manifest, &ckpt, "2", &[]), 0);
    let est = dir.path().join("est");
    let labels_path = piece.join("labels.json");
    assert_eq!(
        cli(&[
            "separate",
            "--checkpoint",
            p(&ckpt),
            "--mixture",
            p(&piece.join("mixture.wav")),
            "--out-dir",
            p(&est),
            "--labels",
            p(&labels_path),
            "--conditioning",
            "label-multiply",
        ]),
        0
    );
    let labels = labels(&piece);
    for inst in Instrument::ALL {
        let w = read_wav(&est.join(format!("{}.wav", inst.name()))).unwrap();
        let silent = w.samples().iter().all(|&v| v == 0.0);
        assert_eq!(silent, labels[inst.index()] == 0.0, "{inst}");
    }
}

#[test]
fn label_model_without_labels_is_a_usage_error() {
    let (dir, manifest) = fixture();
    let piece = dir.path().join("piece");
    synth(&manifest, &piece, "3");
    let ckpt = dir.path().join("model.cunw");
    assert_eq!(tiny_train(&manifest, &ckpt, "1", &[]), 0);
    let est = dir.path().join("est");
    let mix = piece.join("mixture.wav");
    assert_eq!(
        cli(&["separate", "--checkpoint", p(&ckpt), "--mixture", p(&mix), "--out-dir", p(&est), "--conditioning", "label-multiply"]),
        EXIT_USAGE
    );
}

#[test]
fn preset_six_log_header() {
    let (dir, manifest) = fixture();
    let ckpt = dir.path().join("p6.cunw");
    assert_eq!(tiny_train(&manifest, &ckpt, "1", &["--preset", "6"]), 0);
    let log = fs::read_to_string(dir.path().join("p6.csv")).unwrap();
    let header: Value = serde_json::from_str(log.lines().next().unwrap().trim_start_matches("# ")).unwrap();
    assert_eq!(header["preset"], 6);
    assert_eq!(header["freq_axis"], "linear");
    assert_eq!(header["value_scale"], "db_norm");
    assert_eq!(header["model"], "unet");
    assert_eq!(header["mask"], "ratio");
    assert_eq!(header["loss"], "l2");
    assert_eq!(header["curriculum"], false);
}

#[test]
fn resume_continues_the_log() {
    let (dir, manifest) = fixture();
    let ckpt = dir.path().join("run.cunw");
    assert_eq!(tiny_train(&manifest, &ckpt, "2", &[]), 0);
    let resumed = dir.path().join("resumed.cunw");
    let log = dir.path().join("run.csv");
    assert_eq!(
        cli(&[
            "train",
            "--manifest",
            p(&manifest),
            "--out",
            p(&resumed),
            "--log",
            p(&log),
            "--resume",
            p(&ckpt),
            "--iterations",
            "3",
            "--quiet",
        ]),
        0
    );
    let text = fs::read_to_string(&log).unwrap();
    let iterations: Vec<&str> = text.lines().skip(2).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(iterations, ["1", "2", "3"]);
}

#[test]
fn seed_comes_from_the_environment() {
    let (dir, manifest) = fixture();
    let bin = env!("CARGO_BIN_EXE_cunet-cli");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let status = Command::new(bin)
        .args(["synth", "--manifest", p(&manifest), "--out-dir", p(&a)])
        .env("CUNET_SEED", "11")
        .status()
        .unwrap();
    assert!(status.success());
    synth(&manifest, &b, "11");
    assert_eq!(fs::read(a.join("mixture.wav")).unwrap(), fs::read(b.join("mixture.wav")).unwrap());
    assert_eq!(labels(&a), labels(&b));
}
