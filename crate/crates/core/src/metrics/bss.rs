//! Projection-based SDR / SIR / SAR.
//!
//! The estimate is projected onto the span of `L` delayed copies of the
//! references. Signals are extended by `L - 1` samples so every delayed copy
//! fits. Correlations and the final filtering run through FFTs.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{db_ratio, MetricConfig};
use crate::dsp::Waveform;
use crate::error::{invalid, Error, Result};

/// Relative pivot size below which a Gram matrix counts as singular.
const PIVOT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BssScores {
    pub sdr: f64,
    pub sir: f64,
    pub sar: f64,
}

/// Shared FFT-domain state for one set of references, reused by every
/// target and estimate of a piece.
pub struct BssProjector {
    taps: usize,
    len: usize,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
    size: usize,
    ref_spectra: Vec<Vec<Complex64>>,
    gram: DMatrix<f64>,
    full: Cholesky<f64, Dyn>,
}

fn factor(g: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let scale = g.diagonal().max();
    let chol = g.cholesky().ok_or(Error::DegenerateReferences)?;
    if scale <= 0.0 || chol.l_dirty().diagonal().iter().any(|&d| d * d < PIVOT_TOL * scale) {
        return Err(Error::DegenerateReferences);
    }
    Ok(chol)
}

impl BssProjector {
    pub fn new(refs: &[Waveform], taps: usize) -> Result<Self> {
        if taps == 0 {
            return Err(invalid("projection filter needs at least one tap"));
        }
        let len = refs.first().map(Waveform::len).ok_or_else(|| invalid("no references"))?;
        if len == 0 || refs.iter().any(|r| r.len() != len) {
            return Err(invalid("references must be non-empty and equally long"));
        }
        // Linear (not circular) correlation up to lag L - 1 needs len + L - 1 points.
        let size = (len + taps).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);
        let ifft = planner.plan_fft_inverse(size);
        let spectrum = |x: &[f32]| {
            let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
            buf.resize(size, Complex64::new(0.0, 0.0));
            fft.process(&mut buf);
            buf
        };
        let ref_spectra: Vec<_> = refs.iter().map(|r| spectrum(r.samples())).collect();
        let correlate = |a: &[Complex64], b: &[Complex64]| correlate(&*ifft, a, b);
        let lag = |xc: &[f64], d: isize| xc[d.rem_euclid(size as isize) as usize];

        let n = refs.len();
        let mut gram = DMatrix::zeros(n * taps, n * taps);
        for i in 0..n {
            for j in i..n {
                // r[d] = sum_t ref_i[t] ref_j[t + d]; entry (i,k),(j,l) is r[k - l].
                let xc = correlate(&ref_spectra[i], &ref_spectra[j]);
                for k in 0..taps {
                    for l in 0..taps {
                        let v = lag(&xc, k as isize - l as isize);
                        gram[(i * taps + k, j * taps + l)] = v;
                        gram[(j * taps + l, i * taps + k)] = v;
                    }
                }
            }
        }
        if (0..n).any(|i| gram[(i * taps, i * taps)] <= 0.0) {
            return Err(Error::SilentTarget);
        }
        let full = factor(gram.clone())?;
        Ok(Self {
            taps,
            len,
            fft,
            ifft,
            size,
            ref_spectra,
            gram,
            full,
        })
    }

    pub fn n_refs(&self) -> usize {
        self.ref_spectra.len()
    }

    fn spectrum(&self, x: &[f32]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v as f64, 0.0)).collect();
        buf.resize(self.size, Complex64::new(0.0, 0.0));
        self.fft.process(&mut buf);
        buf
    }

    fn lag(&self, xc: &[f64], d: isize) -> f64 {
        xc[d.rem_euclid(self.size as isize) as usize]
    }

    /// Least-squares projection of `est` onto the delayed copies of the
    /// references in `which`, as a signal of length `len + L - 1`.
    fn project(&self, est_spec: &[Complex64], which: &[usize]) -> Result<Vec<f64>> {
        let taps = self.taps;
        let idx: Vec<usize> = which.iter().flat_map(|&i| (0..taps).map(move |k| i * taps + k)).collect();
        let mut rhs = DVector::zeros(idx.len());
        for (a, &i) in which.iter().enumerate() {
            let xc = correlate(&*self.ifft, &self.ref_spectra[i], est_spec);
            for k in 0..taps {
                rhs[a * taps + k] = self.lag(&xc, k as isize);
            }
        }
        let coef = if which.len() == self.n_refs() {
            self.full.solve(&rhs)
        } else {
            factor(self.gram.select_rows(&idx).select_columns(&idx))?.solve(&rhs)
        };

        let mut acc = vec![Complex64::new(0.0, 0.0); self.size];
        for (a, &i) in which.iter().enumerate() {
            let mut filt = vec![Complex64::new(0.0, 0.0); self.size];
            for k in 0..taps {
                filt[k] = Complex64::new(coef[a * taps + k], 0.0);
            }
            self.fft.process(&mut filt);
            for ((o, f), r) in acc.iter_mut().zip(&filt).zip(&self.ref_spectra[i]) {
                *o += f * r;
            }
        }
        self.ifft.process(&mut acc);
        let scale = 1.0 / self.size as f64;
        Ok(acc[..self.len + taps - 1].iter().map(|c| c.re * scale).collect())
    }

    /// SDR, SIR and SAR of `est` for reference `target`.
    pub fn scores(&self, est: &Waveform, target: usize, cfg: &MetricConfig) -> Result<BssScores> {
        if est.len() != self.len {
            return Err(invalid(format!("estimate has {} samples, references {}", est.len(), self.len)));
        }
        if target >= self.n_refs() {
            return Err(invalid(format!("target index {target} out of range")));
        }
        let est_spec = self.spectrum(est.samples());
        let s_target = self.project(&est_spec, &[target])?;
        let all: Vec<usize> = (0..self.n_refs()).collect();
        let p_all = self.project(&est_spec, &all)?;

        let mut padded: Vec<f64> = est.samples().iter().map(|&v| v as f64).collect();
        padded.resize(p_all.len(), 0.0);
        let energy = |f: &dyn Fn(usize) -> f64| (0..p_all.len()).map(|t| f(t).powi(2)).sum::<f64>();
        let e_target = energy(&|t| s_target[t]);
        let e_interf = energy(&|t| p_all[t] - s_target[t]);
        let e_artif = energy(&|t| padded[t] - p_all[t]);
        let e_distort = energy(&|t| padded[t] - s_target[t]);
        let e_signal = energy(&|t| p_all[t]);
        Ok(BssScores {
            sdr: db_ratio(e_target, e_distort, cfg),
            sir: db_ratio(e_target, e_interf, cfg),
            sar: db_ratio(e_signal, e_artif, cfg),
        })
    }
}

/// Circular cross-correlation `c[d] = sum_t a[t] b[t + d]` from spectra.
fn correlate(ifft: &dyn Fft<f64>, a: &[Complex64], b: &[Complex64]) -> Vec<f64> {
    let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(x, y)| x.conj() * y).collect();
    ifft.process(&mut buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// One-shot convenience around [`BssProjector`].
pub fn bss_eval(est: &Waveform, refs: &[Waveform], target_idx: usize, cfg: &MetricConfig) -> Result<BssScores> {
    cfg.validate()?;
    BssProjector::new(refs, cfg.proj_filter_len)?.scores(est, target_idx, cfg)
}
