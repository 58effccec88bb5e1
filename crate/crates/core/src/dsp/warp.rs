//! Frequency-axis warping and magnitude value scaling.

use ndarray::Array2;

use super::{FreqAxis, MagSpec, ValueScale};
use crate::error::{invalid, Result};

/// Offset added before taking decibels.
pub const DB_FLOOR: f32 = 1e-7;
/// Dynamic range kept below the per-segment ceiling, in dB.
pub const DB_RANGE: f32 = 80.0;
/// Lowest allowed ceiling: keeps the floor above the dB value of zero
/// magnitude, so silence always maps to 0.
const MIN_CEILING_DB: f32 = -60.0;

/// Fractional linear-bin positions of the rows of a log-frequency axis with
/// `n_rows` rows. Row 0 is DC; rows `1..n_rows` are geometrically spaced from
/// bin 1 to the Nyquist bin.
pub fn log_grid_positions(n_rows: usize) -> Vec<f64> {
    let top = (n_rows - 1) as f64;
    let steps = (n_rows - 2) as f64;
    std::iter::once(0.0)
        .chain((1..n_rows).map(|r| top.powf((r - 1) as f64 / steps)))
        .collect()
}

/// Linearly interpolate column `col` of `values` at fractional row `pos`.
fn interp_row(values: &Array2<f32>, pos: f64, col: usize) -> f32 {
    let last = values.nrows() - 1;
    let pos = pos.clamp(0.0, last as f64);
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(last);
    let frac = (pos - lo as f64) as f32;
    let a = values[[lo, col]];
    let b = values[[hi, col]];
    a + (b - a) * frac
}

/// Resample the rows of `m` onto the `target` frequency grid.
pub fn warp_freq_axis(m: &MagSpec, target: FreqAxis) -> Result<MagSpec> {
    if m.freq_axis == target {
        return Err(invalid(format!("spectrogram is already on the {target:?} axis")));
    }
    let (n_rows, n_cols) = m.shape();
    if n_rows < 3 {
        return Err(invalid("frequency warping needs at least three rows"));
    }
    // Source positions (in the input's row coordinates) for each output row.
    let sources: Vec<f64> = match target {
        FreqAxis::Log => log_grid_positions(n_rows),
        FreqAxis::Linear => {
            let top = ((n_rows - 1) as f64).ln();
            let steps = (n_rows - 2) as f64;
            std::iter::once(0.0)
                .chain((1..n_rows).map(|k| 1.0 + steps * (k as f64).ln() / top))
                .collect()
        }
    };
    let values = Array2::from_shape_fn((n_rows, n_cols), |(r, c)| interp_row(&m.values, sources[r], c));
    Ok(MagSpec {
        values,
        freq_axis: target,
        value_scale: m.value_scale,
    })
}

/// Compress linear magnitudes with `ln(1 + v)` or normalized decibels.
///
/// `DbNorm` maps `20 log10(v + 1e-7)` into `[ceiling - 80, ceiling]`, where the
/// ceiling is the decibel value of the largest magnitude in `m`, and then
/// affinely onto `[0, 1]`. The ceiling is never taken below -60 dB, so
/// zero magnitude always lands on 0.
pub fn scale_magnitude(m: &MagSpec, mode: ValueScale) -> Result<MagSpec> {
    if m.value_scale != ValueScale::Linear {
        return Err(invalid(format!("magnitudes are already {:?}-scaled", m.value_scale)));
    }
    let values = match mode {
        ValueScale::Linear => return Err(invalid("target scale must be log or db_norm")),
        ValueScale::Log => m.values.mapv(f32::ln_1p),
        ValueScale::DbNorm => {
            let ceiling = (20.0 * (m.max() + DB_FLOOR).log10()).max(MIN_CEILING_DB);
            let floor = ceiling - DB_RANGE;
            m.values.mapv(|v| {
                let db = (20.0 * (v.max(0.0) + DB_FLOOR).log10()).clamp(floor, ceiling);
                (db - floor) / DB_RANGE
            })
        }
    };
    Ok(MagSpec {
        values,
        freq_axis: m.freq_axis,
        value_scale: mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_endpoints() {
        let g = log_grid_positions(512);
        assert_eq!(g.len(), 512);
        assert_eq!(g[0], 0.0);
        assert!((g[1] - 1.0).abs() < 1e-12);
        assert!((g[511] - 511.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn constant_stays_constant() {
        let m = MagSpec::linear(Array2::from_elem((512, 4), 0.25));
        let w = warp_freq_axis(&m, FreqAxis::Log).unwrap();
        assert!(w.values.iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let back = warp_freq_axis(&w, FreqAxis::Linear).unwrap();
        assert!(back.values.iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn same_axis_is_rejected() {
        let m = MagSpec::linear(Array2::zeros((512, 2)));
        assert!(warp_freq_axis(&m, FreqAxis::Linear).is_err());
    }

    #[test]
    fn smooth_spectrum_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let comps: Vec<(f64, f64, f64)> = (1..=3)
            .map(|j| (rng.gen_range(0.1..0.3), j as f64, rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        let values = Array2::from_shape_fn((512, 3), |(k, t)| {
            let x = k as f64 / 512.0;
            let v: f64 = comps.iter().map(|&(a, j, p)| a * (2.0 * std::f64::consts::PI * j * x + p + t as f64).cos()).sum();
            (1.0 + v) as f32
        });
        let m = MagSpec::linear(values);
        let back = warp_freq_axis(&warp_freq_axis(&m, FreqAxis::Log).unwrap(), FreqAxis::Linear).unwrap();
        for k in 2..512 {
            for t in 0..3 {
                let a = m.values[[k, t]];
                let rel = (back.values[[k, t]] - a).abs() / a;
                assert!(rel < 0.05, "row {k}: {rel}");
            }
        }
    }

    #[test]
    fn spike_stays_unimodal() {
        let maxima = |m: &MagSpec| {
            let col: Vec<f32> = m.values.column(0).to_vec();
            (1..511).filter(|&i| col[i] > col[i - 1] && col[i] >= col[i + 1]).count()
        };
        // Spikes placed where the target grid is denser than the source grid.
        let mut values = Array2::zeros((512, 1));
        values[[20, 0]] = 1.0;
        let w = warp_freq_axis(&MagSpec::linear(values), FreqAxis::Log).unwrap();
        assert_eq!(maxima(&w), 1);

        let mut values = Array2::zeros((512, 1));
        values[[480, 0]] = 1.0;
        let log = MagSpec {
            values,
            freq_axis: FreqAxis::Log,
            value_scale: ValueScale::Linear,
        };
        assert_eq!(maxima(&warp_freq_axis(&log, FreqAxis::Linear).unwrap()), 1);
    }

    #[test]
    fn db_norm_endpoints() {
        let zeros = MagSpec::linear(Array2::zeros((4, 4)));
        let s = scale_magnitude(&zeros, ValueScale::DbNorm).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));

        let mut values = Array2::from_elem((4, 4), 0.01);
        values[[2, 1]] = 3.0;
        let s = scale_magnitude(&MagSpec::linear(values), ValueScale::DbNorm).unwrap();
        assert!((s.values[[2, 1]] - 1.0).abs() < 1e-6);
        assert!(s.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn log_scale_formula() {
        let s = scale_magnitude(&MagSpec::linear(Array2::ones((2, 2))), ValueScale::Log).unwrap();
        assert!((s.values[[0, 0]] - std::f32::consts::LN_2).abs() < 1e-6);
        assert!(matches!(scale_magnitude(&s, ValueScale::Log), Err(crate::Error::InvalidInput(_))));
    }
}
