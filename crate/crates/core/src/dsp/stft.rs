//! Centered STFT with a periodic Hann window and its overlap-add inverse.

use ndarray::Array2;
use num_complex::Complex32;
use rustfft::FftPlanner;

use super::{ComplexSpec, Waveform};
use crate::error::{invalid, Result};

pub const N_FFT: usize = 1022;
pub const HOP: usize = 256;
pub const N_BINS: usize = N_FFT / 2 + 1;

/// Squared-window normalization floor in the overlap-add inverse.
const WSUM_FLOOR: f32 = 1e-8;

fn hann(n: usize) -> Vec<f32> {
    (0..n)
        .map(|i| {
            let phase = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            (0.5 - 0.5 * phase.cos()) as f32
        })
        .collect()
}

/// Reflect-pad by `pad` samples on each side without repeating the edge sample.
fn reflect_pad(x: &[f32], pad: usize) -> Vec<f32> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

/// Ratio between total full-spectrum STFT energy and signal energy for
/// interior samples: `n_fft * sum(w^2) / hop`.
pub fn window_energy_constant() -> f64 {
    let w2: f64 = hann(N_FFT).iter().map(|&w| (w as f64).powi(2)).sum();
    N_FFT as f64 * w2 / HOP as f64
}

/// Forward STFT: `1 + len / hop` frames of `n_fft / 2 + 1` bins.
pub fn stft(wave: &Waveform) -> Result<ComplexSpec> {
    let x = wave.samples();
    if x.len() < N_FFT {
        return Err(invalid(format!(
            "signal of {} samples is shorter than the {N_FFT}-sample window",
            x.len()
        )));
    }
    let pad = N_FFT / 2;
    let padded = reflect_pad(x, pad);
    let n_frames = 1 + (padded.len() - N_FFT) / HOP;
    let window = hann(N_FFT);
    let fft = FftPlanner::<f32>::new().plan_fft_forward(N_FFT);

    let mut bins = Array2::<Complex32>::zeros((N_BINS, n_frames));
    let mut buf = vec![Complex32::new(0.0, 0.0); N_FFT];
    let mut scratch = vec![Complex32::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for t in 0..n_frames {
        let frame = &padded[t * HOP..t * HOP + N_FFT];
        for ((b, &s), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex32::new(s * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, &c) in buf[..N_BINS].iter().enumerate() {
            bins[[k, t]] = c;
        }
    }
    Ok(ComplexSpec {
        bins,
        n_fft: N_FFT,
        hop: HOP,
        sample_rate: wave.sample_rate(),
    })
}

/// Inverse STFT by windowed overlap-add, trimmed or zero-extended to `length`.
pub fn istft(spec: &ComplexSpec, length: usize) -> Result<Waveform> {
    if length == 0 {
        return Err(invalid("istft target length must be positive"));
    }
    if spec.n_fft != N_FFT || spec.hop != HOP || spec.n_bins() != N_BINS {
        return Err(invalid(format!(
            "spectrogram parameters (n_fft {}, hop {}, bins {}) do not match the analysis",
            spec.n_fft,
            spec.hop,
            spec.n_bins()
        )));
    }
    let n_frames = spec.n_frames();
    let pad = N_FFT / 2;
    let total = N_FFT + HOP * n_frames.saturating_sub(1);
    let window = hann(N_FFT);
    let ifft = FftPlanner::<f32>::new().plan_fft_inverse(N_FFT);

    let mut acc = vec![0.0f32; total];
    let mut wsum = vec![0.0f32; total];
    let mut buf = vec![Complex32::new(0.0, 0.0); N_FFT];
    let mut scratch = vec![Complex32::new(0.0, 0.0); ifft.get_inplace_scratch_len()];
    let scale = 1.0 / N_FFT as f32;
    for t in 0..n_frames {
        for k in 0..N_BINS {
            buf[k] = spec.bins[[k, t]];
        }
        for k in 1..N_BINS - 1 {
            buf[N_FFT - k] = spec.bins[[k, t]].conj();
        }
        ifft.process_with_scratch(&mut buf, &mut scratch);
        let start = t * HOP;
        for (i, (&b, &w)) in buf.iter().zip(&window).enumerate() {
            acc[start + i] += b.re * scale * w;
            wsum[start + i] += w * w;
        }
    }
    let samples = (0..length)
        .map(|i| {
            let j = i + pad;
            if j < total {
                acc[j] / wsum[j].max(WSUM_FLOOR)
            } else {
                0.0
            }
        })
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{SAMPLE_RATE, SEGMENT_SAMPLES};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), SAMPLE_RATE).unwrap()
    }

    #[test]
    fn segment_yields_512_by_256() {
        let spec = stft(&Waveform::zeros(SEGMENT_SAMPLES, SAMPLE_RATE)).unwrap();
        assert_eq!(spec.shape(), (512, 256));
        assert!(spec.bins.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn too_short_is_rejected() {
        let w = Waveform::zeros(N_FFT - 1, SAMPLE_RATE);
        assert!(matches!(stft(&w), Err(crate::Error::InvalidInput(_))));
    }

    #[test]
    fn bin_centered_sine_peaks_at_its_bin() {
        let k = 40usize;
        let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
        let s = (0..SEGMENT_SAMPLES)
            .map(|n| (2.0 * std::f64::consts::PI * f * n as f64 / SAMPLE_RATE as f64).sin() as f32)
            .collect();
        let spec = stft(&Waveform::new(s, SAMPLE_RATE).unwrap()).unwrap();
        // Frames whose window lies fully inside the signal.
        for t in 2..spec.n_frames() - 2 {
            let col = spec.bins.column(t);
            let peak = (0..N_BINS).max_by(|&a, &b| col[a].norm().total_cmp(&col[b].norm())).unwrap();
            assert_eq!(peak, k, "frame {t}");
        }
    }

    #[test]
    fn round_trip_interior() {
        let x = noise(SEGMENT_SAMPLES, 3);
        let y = istft(&stft(&x).unwrap(), x.len()).unwrap();
        let err = x.samples()[N_FFT..x.len() - N_FFT]
            .iter()
            .zip(&y.samples()[N_FFT..x.len() - N_FFT])
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()));
        assert!(err < 1e-4, "max error {err}");
    }

    #[test]
    fn zero_spec_gives_silence() {
        let spec = stft(&Waveform::zeros(4096, SAMPLE_RATE)).unwrap();
        let y = istft(&spec, 4096).unwrap();
        assert!(y.samples().iter().all(|&s| s == 0.0));
        assert!(matches!(istft(&spec, 0), Err(crate::Error::InvalidInput(_))));
    }

    #[test]
    fn synthesis_is_linear() {
        let a = stft(&noise(8192, 1)).unwrap();
        let b = stft(&noise(8192, 2)).unwrap();
        let sum = a.with_bins(&a.bins + &b.bins);
        let ya = istft(&a, 8192).unwrap();
        let yb = istft(&b, 8192).unwrap();
        let ys = istft(&sum, 8192).unwrap();
        for i in 0..8192 {
            let d = ys.samples()[i] - ya.samples()[i] - yb.samples()[i];
            assert!(d.abs() < 1e-6, "sample {i}: {d}");
        }
    }

    #[test]
    fn analysis_energy_matches_window_constant() {
        // Signal vanishes near the edges so reflect padding adds no energy.
        let mut x = noise(SEGMENT_SAMPLES, 9).into_samples();
        x[..2 * N_FFT].fill(0.0);
        x[SEGMENT_SAMPLES - 2 * N_FFT..].fill(0.0);
        let sig: f64 = x.iter().map(|&s| (s as f64).powi(2)).sum();
        let spec = stft(&Waveform::new(x, SAMPLE_RATE).unwrap()).unwrap();
        let mut full = 0.0f64;
        for ((k, _), c) in spec.bins.indexed_iter() {
            let e = (c.norm() as f64).powi(2);
            full += if k == 0 || k == N_BINS - 1 { e } else { 2.0 * e };
        }
        let ratio = full / (sig * window_energy_constant());
        assert!((ratio - 1.0).abs() < 1e-3, "ratio {ratio}");
    }
}
