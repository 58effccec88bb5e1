//! Synthetic recordings for fixtures, smoke tests and benchmarks:
//! harmonic tones and band-limited noise at the working sample rate.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::dsp::Waveform;
use crate::error::{invalid, Result};
use crate::mixgen::{Instrument, SourceLibrary};
use crate::SAMPLE_RATE;

/// Harmonic tone at `f0` Hz with random harmonic phases and a slow
/// amplitude wobble, peak-normalized to 0.5.
pub fn harmonic_tone(f0: f64, len: usize, seed: u64) -> Result<Waveform> {
    if !(f0 > 0.0) || len == 0 {
        return Err(invalid("tone needs a positive frequency and length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nyq = SAMPLE_RATE as f64 / 2.0;
    let partials: Vec<(f64, f64, f64)> = (1..=8)
        .map(|h| (f0 * h as f64, 1.0 / h as f64, rng.gen_range(0.0..TAU)))
        .filter(|&(f, _, _)| f < nyq * 0.95)
        .collect();
    let wobble = rng.gen_range(0.2..0.8);
    let x: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 / SAMPLE_RATE as f64;
            let env = 0.75 + 0.25 * (TAU * wobble * t).sin();
            env * partials.iter().map(|&(f, a, p)| a * (TAU * f * t + p).sin()).sum::<f64>()
        })
        .collect();
    Ok(normalized(x, 0.5))
}

/// White Gaussian-ish noise restricted to `[lo, hi]` Hz, peak 0.5.
pub fn bandlimited_noise(lo: f64, hi: f64, len: usize, seed: u64) -> Result<Waveform> {
    if !(0.0 <= lo && lo < hi) || len == 0 {
        return Err(invalid("noise band must satisfy 0 <= lo < hi"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf: Vec<Complex64> = (0..len).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    let df = SAMPLE_RATE as f64 / len as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(len - k) as f64 * df;
        if f < lo || f > hi {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    Ok(normalized(buf.iter().map(|c| c.re).collect(), 0.5))
}

fn normalized(x: Vec<f64>, peak: f64) -> Waveform {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    Waveform::new(x.iter().map(|v| (v * peak / m) as f32).collect(), SAMPLE_RATE).expect("finite samples")
}

const PRIMES: [f64; 13] = [2.0, 3.0, 5.0, 7.0, 11.0, 13.0, 17.0, 19.0, 23.0, 29.0, 31.0, 37.0, 41.0];

/// Fundamental of an instrument's synthetic voice: `60 sqrt(p)` for the
/// instrument's prime, so no two fundamentals are in a rational ratio.
pub fn instrument_f0(inst: Instrument) -> f64 {
    60.0 * PRIMES[inst.index()].sqrt()
}

/// A tone at the instrument's fundamental plus a quieter narrow noise band
/// just above its fourth partial.
pub fn instrument_recording(inst: Instrument, len: usize, seed: u64) -> Result<Waveform> {
    let f0 = instrument_f0(inst);
    let tone = harmonic_tone(f0, len, seed)?;
    let noise = bandlimited_noise(f0 * 4.3, f0 * 4.7, len, seed ^ 0x5eed)?;
    let mix = tone.samples().iter().zip(noise.samples()).map(|(a, b)| (a + 0.15 * b) as f64).collect();
    Ok(normalized(mix, 0.8))
}

/// A library with `per_instrument` recordings of `len` samples each.
pub fn synthetic_library(instruments: &[Instrument], per_instrument: usize, len: usize, seed: u64) -> Result<SourceLibrary> {
    let mut map = BTreeMap::new();
    for &inst in instruments {
        let recs = (0..per_instrument)
            .map(|r| instrument_recording(inst, len, seed.wrapping_mul(1000).wrapping_add((inst.index() * 31 + r) as u64)))
            .collect::<Result<Vec<_>>>()?;
        map.insert(inst, recs);
    }
    SourceLibrary::new(map)
}
