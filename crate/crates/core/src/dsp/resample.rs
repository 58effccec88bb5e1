//! Windowed-sinc polyphase resampling between integer sample rates.

use super::Waveform;
use crate::error::{invalid, Result};

/// Taps evaluated per output sample.
const TAPS: usize = 64;
/// Cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.9;
/// Kaiser shape parameter; about -63 dB side lobes.
const KAISER_BETA: f64 = 6.0;

/// Polyphase resampler for a fixed rational ratio `up / down`.
#[derive(Debug, Clone)]
pub struct Resampler {
    from: u32,
    to: u32,
    up: usize,
    down: usize,
    /// `up` phases of `TAPS` coefficients, each phase normalized to unit DC gain.
    phases: Vec<[f64; TAPS]>,
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

impl Resampler {
    pub fn new(from: u32, to: u32) -> Result<Self> {
        if from == 0 || to == 0 {
            return Err(invalid("sample rates must be positive"));
        }
        let g = gcd(from as u64, to as u64);
        let up = (to as u64 / g) as usize;
        let down = (from as u64 / g) as usize;
        // Cutoff in cycles per input sample, relative to the input Nyquist.
        let fc = (up as f64 / down as f64).min(1.0) * ROLLOFF;
        let half = (TAPS / 2) as f64 + 1.0;
        let norm = bessel_i0(KAISER_BETA);
        let first = -((TAPS / 2) as isize) + 1;
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let mut taps = [0.0; TAPS];
                for (i, tap) in taps.iter_mut().enumerate() {
                    let x = (first + i as isize) as f64 - frac;
                    let r = x / half;
                    let w = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm;
                    *tap = sinc(fc * x) * w;
                }
                let sum: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|t| *t /= sum);
                taps
            })
            .collect();
        Ok(Self {
            from,
            to,
            up,
            down,
            phases,
        })
    }

    pub fn output_len(&self, input_len: usize) -> usize {
        (input_len * self.up).div_ceil(self.down)
    }

    pub fn process(&self, wave: &Waveform) -> Result<Waveform> {
        if wave.is_empty() {
            return Err(invalid("cannot resample an empty waveform"));
        }
        if wave.sample_rate() != self.from {
            return Err(invalid(format!(
                "resampler expects {} Hz input, got {} Hz",
                self.from,
                wave.sample_rate()
            )));
        }
        if self.from == self.to {
            return Ok(wave.clone());
        }
        let x = wave.samples();
        let last = x.len() as isize - 1;
        let first = -((TAPS / 2) as isize) + 1;
        let out: Vec<f32> = (0..self.output_len(x.len()))
            .map(|n| {
                let pos = n * self.down;
                let base = (pos / self.up) as isize;
                let taps = &self.phases[pos % self.up];
                let acc: f64 = taps
                    .iter()
                    .enumerate()
                    .map(|(i, &h)| {
                        // Edge samples are replicated so constant signals stay constant.
                        let j = (base + first + i as isize).clamp(0, last) as usize;
                        h * x[j] as f64
                    })
                    .sum();
                acc as f32
            })
            .collect();
        Waveform::new(out, self.to)
    }
}

/// Resample `wave` to `target_rate`.
pub fn resample(wave: &Waveform, target_rate: u32) -> Result<Waveform> {
    if wave.is_empty() {
        return Err(invalid("cannot resample an empty waveform"));
    }
    Resampler::new(wave.sample_rate(), target_rate)?.process(wave)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::{num_complex::Complex64, FftPlanner};

    fn sine(freq: f64, rate: u32, len: usize) -> Waveform {
        let s = (0..len)
            .map(|n| (2.0 * std::f64::consts::PI * freq * n as f64 / rate as f64).sin() as f32 * 0.5)
            .collect();
        Waveform::new(s, rate).unwrap()
    }

    fn spectrum(x: &[f32]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
        buf[..x.len() / 2].iter().map(|c| c.norm()).collect()
    }

    #[test]
    fn same_rate_is_identity() {
        let w = sine(440.0, 11025, 1000);
        assert_eq!(resample(&w, 11025).unwrap(), w);
    }

    #[test]
    fn dc_is_preserved() {
        let w = Waveform::new(vec![0.5; 4410], 22050).unwrap();
        let out = resample(&w, 11025).unwrap();
        assert_eq!(out.len(), 2205);
        assert_eq!(out.sample_rate(), 11025);
        for &s in out.samples() {
            assert!((s - 0.5).abs() < 1e-6, "{s}");
        }
    }

    #[test]
    fn tone_peak_stays_at_its_frequency() {
        let n_out = 11025;
        let out = resample(&sine(1000.0, 22050, 2 * n_out), 11025).unwrap();
        assert_eq!(out.len(), n_out);
        let spec = spectrum(out.samples());
        let peak = spec
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        // Bin width is exactly 1 Hz for a one-second output.
        let expected = 1000.0 * n_out as f64 / 11025.0;
        assert!((peak as f64 - expected).abs() <= 1.0, "peak at bin {peak}");
    }

    #[test]
    fn content_above_target_nyquist_is_rejected() {
        let pass = resample(&sine(1000.0, 22050, 44100), 11025).unwrap();
        let stop = resample(&sine(7000.0, 22050, 44100), 11025).unwrap();
        let energy = |w: &Waveform| w.samples()[200..w.len() - 200].iter().map(|&s| (s as f64).powi(2)).sum::<f64>();
        let ratio_db = 10.0 * (energy(&stop) / energy(&pass)).log10();
        assert!(ratio_db < -60.0, "stop-band leakage {ratio_db} dB");
    }

    #[test]
    fn upsampling_non_integer_ratio() {
        let out = resample(&sine(500.0, 8000, 8000), 11025).unwrap();
        assert_eq!(out.len(), 11025);
        let spec = spectrum(out.samples());
        let peak = spec.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((peak as f64 - 500.0).abs() <= 1.0);
    }

    #[test]
    fn empty_input_is_rejected() {
        let w = Waveform::zeros(0, 22050);
        assert!(matches!(resample(&w, 11025), Err(crate::Error::InvalidInput(_))));
    }
}
