//! Acceptance suite: one check per criterion, each printing a PASS/FAIL
//! line with the measured values. Pass criterion numbers as arguments to
//! run a subset.

mod common;

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cunet::autodiff::Adam;
use cunet::dsp::{istft, stft, FreqAxis, MagSpec, ValueScale};
use cunet::losses::{LossConfig, LossKind};
use cunet::masks::{apply_mask, ideal_binary_mask, ideal_ratio_mask, MaskKind};
use cunet::metrics::{bss_eval, pes, sd_sdr, si_sdr, silent_frames, BssProjector, MetricConfig};
use cunet::mixgen::{curriculum_step, lr_step, sample_mixture, CURRICULUM_PATIENCE, LR_PATIENCE, MAX_SOURCES};
use cunet::model::{Conditioning, ContextKind};
use cunet::pipeline::{oracle_separate, separate, FrontEnd};
use cunet::presets::ExperimentPreset;
use cunet::synth::{bandlimited_noise, harmonic_tone, synthetic_library};
use cunet::train::{eval_loss, make_example, train_step};
use cunet::wiener::{wiener_filter, WienerConfig};
use cunet::{
    ContextInput, Instrument, Model, ScheduleState, SourceLibrary, UNetConfig, Waveform, NUM_INSTRUMENTS, SAMPLE_RATE,
    SEGMENT_SAMPLES,
};

use common::layers::{cases, max_rel_error, TOL_F32, TOL_F64};

/// Criteria that cannot hold as stated. Each is still run and reported as
/// FAIL; the run only fails when an outcome differs from this list.
///
/// 2: the IRM sum bound is asserted at |Y| > 1e-6, but the 1e-8 stabilizer
/// in the mask denominator alone lowers the sum to about 0.99 there, and f32
/// STFT rounding of the mixture adds more at low magnitudes.
const KNOWN_FAILURES: &[u32] = &[2];

type Outcome = Result<(bool, String), String>;
type Check = (u32, &'static str, fn() -> Outcome);

fn wave(x: Vec<f32>) -> Waveform {
    Waveform::new(x, SAMPLE_RATE).unwrap()
}

fn random_wave(rng: &mut ChaCha8Rng, n: usize) -> Waveform {
    wave((0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

fn err<E: std::fmt::Debug>(e: E) -> String {
    format!("{e:?}")
}

fn stft_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst_err, mut worst_time) = (0.0f32, 0.0f64);
    let mut shapes_ok = true;
    for _ in 0..5 {
        let x = random_wave(&mut rng, SEGMENT_SAMPLES);
        let t = Instant::now();
        let spec = stft(&x).map_err(err)?;
        let y = istft(&spec, x.len()).map_err(err)?;
        worst_time = worst_time.max(t.elapsed().as_secs_f64());
        shapes_ok &= spec.shape() == (512, 256);
        let interior = 1022..x.len() - 1022;
        let e = x.samples()[interior.clone()]
            .iter()
            .zip(&y.samples()[interior])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        worst_err = worst_err.max(e);
    }
    Ok((
        shapes_ok && worst_err < 1e-4 && worst_time < 1.0,
        format!("shape 512x256: {shapes_ok}, max interior error {worst_err:.2e}, slowest {worst_time:.3} s"),
    ))
}

fn mag1(v: f32) -> MagSpec {
    MagSpec::linear(Array2::from_elem((1, 1), v))
}

fn mask_oracles() -> Outcome {
    let irm = |x, y| ideal_ratio_mask(&mag1(x), &mag1(y), 0).unwrap().values[[0, 0]];
    let ibm = |x, y| ideal_binary_mask(&mag1(x), &mag1(y), 0).unwrap().values[[0, 0]];
    let examples = irm(2.0, 4.0) == 0.5
        && irm(0.0, 4.0) == 0.0
        && irm(5.0, 4.0) == 1.0
        && ibm(3.0, 4.0) == 1.0
        && ibm(1.0, 4.0) == 0.0
        && ibm(2.0, 2.0) == 1.0;

    let insts = [Instrument::Violin, Instrument::Cello, Instrument::Flute, Instrument::Horn, Instrument::Tuba];
    let lib = synthetic_library(&insts, 2, 70_000, 2).map_err(err)?;
    // Minimum of the IRM sum over bins above each mixture magnitude.
    let thresholds = [1e-6f32, 1e-3, 1e-1];
    let mut worst = [f32::INFINITY; 3];
    let mut bins = 0usize;
    for seed in 0..100 {
        let s = sample_mixture(&lib, 3, seed).map_err(err)?;
        let mix = stft(&s.mixture).map_err(err)?.magnitude();
        let mut sum = Array2::<f32>::zeros(mix.shape());
        for i in s.present() {
            let src = stft(&s.sources[i.index()]).map_err(err)?.magnitude();
            sum += &ideal_ratio_mask(&src, &mix, i.index()).map_err(err)?.values;
        }
        for (&m, &y) in sum.iter().zip(mix.values.iter()) {
            for (w, &t) in worst.iter_mut().zip(&thresholds) {
                if y > t {
                    *w = w.min(m);
                }
            }
            bins += (y > 1e-6) as usize;
        }
    }
    Ok((
        examples && worst[0] >= 1.0 - 1e-6,
        format!(
            "unit examples exact: {examples}; min sum of IRMs over {bins} bins with |Y| > 1e-6: {:.7} \
             (|Y| > 1e-3: {:.7}, |Y| > 1e-1: {:.7}; the 1e-8 stabilizer alone allows 1e-2 at |Y| = 1e-6)",
            worst[0], worst[1], worst[2]
        ),
    ))
}

fn gradient_checks() -> Outcome {
    let t = Instant::now();
    let (mut w64, mut w32) = (0.0f64, 0.0f64);
    let mut failed = Vec::new();
    let all = cases();
    for case in &all {
        let e64 = max_rel_error::<f64>(case).map_err(err)?;
        let e32 = max_rel_error::<f32>(case).map_err(err)?;
        if e64 >= TOL_F64 || e32 >= TOL_F32 {
            failed.push(case.name);
        }
        w64 = w64.max(e64);
        w32 = w32.max(e32);
    }
    let secs = t.elapsed().as_secs_f64();
    Ok((
        failed.is_empty() && secs < 120.0,
        format!("{} layer kinds, worst f64 {w64:.1e}, worst f32 {w32:.1e}, {secs:.1} s, failing {failed:?}", all.len()),
    ))
}

fn film_identity() -> Outcome {
    let plain = Model::build(UNetConfig::default(), 4).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut identical = 0;
    let variants = [Conditioning::FilmBottleneck, Conditioning::FilmEncoder, Conditioning::FilmFinal];
    let mut film: Vec<Model> = variants
        .iter()
        .map(|&c| {
            Model::build(
                UNetConfig {
                    conditioning: c,
                    context: ContextKind::Label,
                    ..UNetConfig::default()
                },
                4,
            )
        })
        .collect::<Result<_, _>>()
        .map_err(err)?;
    film.iter_mut().for_each(Model::force_film_identity);
    for _ in 0..10 {
        let mag = MagSpec::linear(Array2::from_shape_fn((512, 256), |_| rng.gen_range(0.0..1.0)));
        let mut labels = vec![0.0; NUM_INSTRUMENTS];
        labels[rng.gen_range(0..NUM_INSTRUMENTS)] = 1.0;
        let ctx = ContextInput::Label(labels);
        let a = plain.predict(&mag, None).map_err(err)?;
        let all_same = film.iter().all(|m| m.predict(&mag, Some(&ctx)).map(|b| b == a).unwrap_or(false));
        identical += all_same as usize;
    }
    Ok((
        identical == 10,
        format!("{identical}/10 random 512x256 inputs bit-identical for bottleneck, encoder and final FiLM"),
    ))
}

/// Least-squares projection of `e` onto the columns of `a`, via SVD.
fn project(a: &DMatrix<f64>, e: &DVector<f64>) -> DVector<f64> {
    let coef = a.clone().svd(true, true).solve(e, 1e-12).unwrap();
    a * coef
}

fn db(num: f64, den: f64) -> f64 {
    10.0 * (num / den).log10()
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cfg = MetricConfig::test_mode();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let refs: Vec<Waveform> = (0..3).map(|_| random_wave(&mut rng, 16)).collect();
        let est = wave(
            (0..16)
                .map(|n| {
                    0.9 * refs[0].samples()[n] + 0.3 * refs[1].samples()[n] - 0.2 * refs[2].samples()[n] + rng.gen_range(-0.1..0.1)
                })
                .collect(),
        );
        let col = |w: &Waveform| DVector::from_iterator(16, w.samples().iter().map(|&v| v as f64));
        let e = col(&est);
        let r0 = col(&refs[0]);
        // Scale-invariant and scale-dependent SDR from the one-column projection.
        let proj = project(&DMatrix::from_columns(std::slice::from_ref(&r0)), &e);
        let si_oracle = db(proj.norm_squared(), (&proj - &e).norm_squared());
        let sd_oracle = db(proj.norm_squared(), (&r0 - &e).norm_squared());
        // BSS-eval decomposition with single-tap filters.
        let all = DMatrix::from_columns(&refs.iter().map(col).collect::<Vec<_>>());
        let p_all = project(&all, &e);
        let e_interf = &p_all - &proj;
        let e_artif = &e - &p_all;
        let sdr = db(proj.norm_squared(), (&e_interf + &e_artif).norm_squared());
        let sir = db(proj.norm_squared(), e_interf.norm_squared());
        let sar = db((&proj + &e_interf).norm_squared(), e_artif.norm_squared());
        let got = bss_eval(&est, &refs, 0, &cfg).map_err(err)?;
        for (a, b) in [
            (si_sdr(&est, &refs[0], &cfg).map_err(err)?, si_oracle),
            (sd_sdr(&est, &refs[0], &cfg).map_err(err)?, sd_oracle),
            (got.sdr, sdr),
            (got.sir, sir),
            (got.sar, sar),
        ] {
            worst = worst.max((a - b).abs());
        }
    }
    // Residual energy stays far above the metric's eps, the only scale-dependent term.
    let mut scale_gap = 0.0f64;
    for _ in 0..20 {
        let r = wave((0..16).map(|_| rng.gen_range(-10.0..10.0)).collect());
        let est = wave(r.samples().iter().map(|&v| v + rng.gen_range(-5.0..5.0)).collect());
        let base = si_sdr(&est, &r, &cfg).map_err(err)?;
        for c in [0.5f32, 2.0, 8.0] {
            let scaled = wave(est.samples().iter().map(|&v| v * c).collect());
            scale_gap = scale_gap.max((si_sdr(&scaled, &r, &cfg).map_err(err)? - base).abs());
        }
    }
    let r = random_wave(&mut rng, 16);
    let half = wave(r.samples().iter().map(|&v| 0.5 * v).collect());
    let sd_half = sd_sdr(&half, &r, &cfg).map_err(err)?;
    Ok((
        worst < 1e-6 && scale_gap < 1e-9 && sd_half.abs() < 1e-6,
        format!("max oracle gap {worst:.1e} dB, SI-SDR scale gap {scale_gap:.1e} dB, SD-SDR(0.5 ref) {sd_half:.1e} dB"),
    ))
}

fn oracle_separation() -> Outcome {
    let t = Instant::now();
    let insts: Vec<Instrument> = Instrument::ALL.to_vec();
    let lib = synthetic_library(&insts, 2, 70_000, 6).map_err(err)?;
    let cfg = MetricConfig::default();
    let mut scores = Vec::new();
    for seed in 0..20 {
        let s = sample_mixture(&lib, 2, 100 + seed).map_err(err)?;
        let present: Vec<Waveform> = s.present().iter().map(|i| s.sources[i.index()].clone()).collect();
        let est = oracle_separate(&s.mixture, &present, MaskKind::Ratio).map_err(err)?;
        for (e, r) in est.iter().zip(&present) {
            scores.push(si_sdr(e, r, &cfg).map_err(err)?);
        }
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let secs = t.elapsed().as_secs_f64();
    Ok((
        mean > 10.0 && secs < 60.0,
        format!("mean IRM SI-SDR {mean:.2} dB over 20 mixtures ({} stems), {secs:.1} s", scores.len()),
    ))
}

/// Two sources whose noise beds tile the spectrum, so every bin of the
/// mixture sits inside the 80 dB input range and the ideal masks are a
/// function of the input.
fn overfit_fixture() -> Result<SourceLibrary, String> {
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let voice = |f0: f64, lo: f64, hi: f64, seed: u64| -> Result<Waveform, String> {
        let tone = harmonic_tone(f0, 70_000, seed).map_err(err)?;
        let bed = bandlimited_noise(lo, hi, 70_000, seed + 1).map_err(err)?;
        Ok(wave(tone.samples().iter().zip(bed.samples()).map(|(a, b)| a + 0.2 * b).collect()))
    };
    let mut map = BTreeMap::new();
    map.insert(Instrument::Clarinet, vec![voice(233.0, 0.0, nyquist / 2.0, 1)?]);
    map.insert(Instrument::Cello, vec![voice(97.0, nyquist / 2.0, nyquist, 5)?]);
    SourceLibrary::new(map).map_err(err)
}

fn overfit_smoke() -> Outcome {
    let t = Instant::now();
    let lib = overfit_fixture()?;
    let sample = sample_mixture(&lib, 2, 3).map_err(err)?;
    let front = FrontEnd {
        freq_axis: FreqAxis::Linear,
        value_scale: ValueScale::DbNorm,
    };
    let example = vec![make_example(&front, &sample, MaskKind::Ratio, None, None).map_err(err)?];
    let mut model = Model::build(
        UNetConfig {
            base_channels: 4,
            ..UNetConfig::default()
        },
        1,
    )
    .map_err(err)?;
    let mut adam = Adam::new(model.params());
    let loss = LossConfig::new(LossKind::L2);
    let initial = eval_loss(&model, &example, &loss, 1).map_err(err)?;
    let spec = stft(&sample.mixture).map_err(err)?;
    let input = front.model_input(&spec.magnitude()).map_err(err)?;
    let reconstruct = |model: &Model| -> Result<Vec<f64>, String> {
        let masks = model.predict(&input, None).map_err(err)?;
        sample
            .present()
            .iter()
            .map(|i| {
                let y = apply_mask(&masks[i.index()], &spec).map_err(err)?;
                let w = istft(&y, sample.mixture.len()).map_err(err)?;
                si_sdr(&w, &sample.sources[i.index()], &MetricConfig::default()).map_err(err)
            })
            .collect()
    };
    let (mut steps, mut ratio, mut sdrs) = (0u64, 1.0, vec![f64::NEG_INFINITY]);
    while steps < 2000 {
        train_step(&mut model, &mut adam, &[&example[0]], &loss, 3e-3, steps).map_err(err)?;
        steps += 1;
        if steps % 50 == 0 {
            ratio = eval_loss(&model, &example, &loss, 1).map_err(err)? / initial;
            sdrs = reconstruct(&model)?;
            if ratio < 0.01 && sdrs.iter().all(|&v| v > 15.0) {
                break;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    let min_sdr = sdrs.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((
        ratio < 0.01 && min_sdr > 15.0 && secs < 600.0,
        format!(
            "{steps} steps, loss {:.3}% of initial, min SI-SDR {min_sdr:.2} dB, {secs:.0} s",
            100.0 * ratio
        ),
    ))
}

fn label_multiply_silence() -> Outcome {
    let model = Model::build(
        UNetConfig {
            base_channels: 4,
            conditioning: Conditioning::LabelMultiply,
            context: ContextKind::Label,
            ..UNetConfig::default()
        },
        8,
    )
    .map_err(err)?;
    let front = FrontEnd {
        freq_axis: FreqAxis::Linear,
        value_scale: ValueScale::DbNorm,
    };
    let lib = synthetic_library(&[Instrument::Viola, Instrument::Oboe, Instrument::Horn], 1, 70_000, 4).map_err(err)?;
    let s = sample_mixture(&lib, 2, 2).map_err(err)?;
    let labels = s.labels.to_vec();
    let stems = separate(
        &model,
        &front,
        &s.mixture,
        |_| Ok(Some(ContextInput::Label(labels.clone()))),
        &WienerConfig::new(1),
    )
    .map_err(err)?;
    let cfg = MetricConfig::default();
    let (mut silent, mut at_floor, mut absent) = (0, 0, 0);
    for (i, stem) in stems.iter().enumerate() {
        if labels[i] == 1.0 {
            continue;
        }
        absent += 1;
        silent += stem.samples().iter().all(|&v| v == 0.0) as usize;
        let p = pes(stem, &silent_frames(&s.sources[i], &cfg), &cfg).map_err(err)?;
        at_floor += (p == cfg.floor_db) as usize;
    }
    Ok((
        silent == absent && at_floor == absent,
        format!("{silent}/{absent} absent stems exactly silent, {at_floor}/{absent} with PES at {} dB", cfg.floor_db),
    ))
}

fn wiener_consistency() -> Outcome {
    let lib = synthetic_library(&[Instrument::Flute, Instrument::Bassoon], 1, 70_000, 11).map_err(err)?;
    let s = sample_mixture(&lib, 2, 1).map_err(err)?;
    let present: Vec<Waveform> = s.present().iter().map(|i| s.sources[i.index()].clone()).collect();
    let y = stft(&s.mixture).map_err(err)?;
    let mags: Vec<MagSpec> = present.iter().map(|w| stft(w).map(|x| x.magnitude())).collect::<Result<_, _>>().map_err(err)?;
    // Each estimate leaks 40% of the other source's magnitude.
    let leaky: Vec<MagSpec> = (0..2).map(|i| MagSpec::linear(&mags[i].values + &(mags[1 - i].values.mapv(|v| 0.4 * v)))).collect();

    let mut worst_rel = 0.0f64;
    for iterations in [1, 2] {
        let out = wiener_filter(&leaky, &y, &WienerConfig::new(iterations)).map_err(err)?;
        for (yb, (a, b)) in y.bins.iter().zip(out[0].bins.iter().zip(out[1].bins.iter())) {
            let ym = yb.norm() as f64;
            if ym > 1e-3 {
                worst_rel = worst_rel.max(((a + b) - yb).norm() as f64 / ym);
            }
        }
    }

    let cfg = MetricConfig::default();
    let projector = BssProjector::new(&present, cfg.proj_filter_len).map_err(err)?;
    let sir = |iterations: usize| -> Result<Vec<f64>, String> {
        let out = wiener_filter(&leaky, &y, &WienerConfig::new(iterations)).map_err(err)?;
        out.iter()
            .enumerate()
            .map(|(i, x)| {
                let w = istft(x, s.mixture.len()).map_err(err)?;
                projector.scores(&w, i, &cfg).map(|b| b.sir).map_err(err)
            })
            .collect()
    };
    let (before, after) = (sir(0)?, sir(1)?);
    let improved = before.iter().zip(&after).all(|(b, a)| a >= b);
    Ok((
        worst_rel < 1e-4 && improved,
        format!("max relative mixture error {worst_rel:.1e}; SIR before {before:.2?} dB, after one iteration {after:.2?} dB"),
    ))
}

fn schedulers() -> Outcome {
    let mut st = ScheduleState::new(true, 1e-5);
    st = curriculum_step(st, 1.0);
    let mut increments = Vec::new();
    for i in 1..=6 * CURRICULUM_PATIENCE {
        let before = st.max_sources;
        st = curriculum_step(st, 1.0);
        if st.max_sources != before {
            increments.push(i);
        }
    }
    let expected: Vec<u64> = (1..=(MAX_SOURCES as u64 - 2)).map(|k| k * CURRICULUM_PATIENCE).collect();
    let curriculum_ok = increments == expected && st.max_sources == MAX_SOURCES;

    let mut lr = ScheduleState::new(false, 1e-5);
    lr = lr_step(lr, 1.0);
    let mut halvings = Vec::new();
    for i in 1..=2 * LR_PATIENCE {
        let before = lr.lr;
        lr = lr_step(lr, 2.0);
        if lr.lr != before {
            halvings.push((i, lr.lr));
        }
    }
    let lr_ok = halvings == [(LR_PATIENCE, 5e-6), (2 * LR_PATIENCE, 2.5e-6)];
    Ok((
        curriculum_ok && lr_ok && CURRICULUM_PATIENCE == 10_000 && LR_PATIENCE == 25_000,
        format!("curriculum steps at {increments:?} (cap {}), lr halvings at {halvings:?}", st.max_sources),
    ))
}

fn preset_fidelity() -> Outcome {
    let golden = include_str!("data/preset_grid.txt");
    let expected: Vec<&str> = golden.lines().collect();
    let rendered: Vec<String> = ExperimentPreset::all().iter().map(|p| p.table_row()).collect();
    let mismatched: Vec<u8> = ExperimentPreset::all()
        .iter()
        .zip(&expected)
        .filter(|(p, e)| p.table_row() != **e)
        .map(|(p, _)| p.id)
        .collect();
    let round_trip = ExperimentPreset::all()
        .iter()
        .all(|p| serde_json::from_str::<ExperimentPreset>(&serde_json::to_string(p).unwrap()).ok() == Some(*p));
    Ok((
        rendered.len() == 18 && expected.len() == 18 && mismatched.is_empty() && round_trip,
        format!("{} presets, mismatched rows {mismatched:?}, JSON round trip {round_trip}", rendered.len()),
    ))
}

fn main() {
    let checks: [Check; 11] = [
        (1, "STFT fidelity", stft_fidelity),
        (2, "mask oracles", mask_oracles),
        (3, "gradient checks", gradient_checks),
        (4, "FiLM identity", film_identity),
        (5, "metric oracles", metric_oracles),
        (6, "oracle separation quality", oracle_separation),
        (7, "overfit smoke test", overfit_smoke),
        (8, "label-multiply silence", label_multiply_silence),
        (9, "Wiener consistency", wiener_consistency),
        (10, "schedulers", schedulers),
        (11, "preset fidelity", preset_fidelity),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = 0;
    for (id, name, check) in checks {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let known = KNOWN_FAILURES.contains(&id);
        unexpected += (pass == known) as usize;
        let note = match (pass, known) {
            (false, true) => " (known failure, see README)",
            (true, true) => " (listed as a known failure; update the list)",
            _ => "",
        };
        println!(
            "{} criterion {id:>2} ({name}): {detail} [{:.1} s]{note}",
            if pass { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    if unexpected > 0 {
        println!("{unexpected} criteria differ from the expected outcome");
        std::process::exit(1);
    }
}
