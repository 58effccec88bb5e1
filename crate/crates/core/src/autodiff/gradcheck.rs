//! Finite-difference gradient checking.
//!
//! The numeric side always runs in `f64` with central differences, so the
//! same reference serves both the `f64` and the `f32` analytic gradients.

use super::{Graph, Real, Tensor, Var};
use crate::error::{invalid, Result};

/// A scalar function of some input tensors, expressible at either precision.
pub trait GradFn {
    fn eval<T: Real>(&self, g: &mut Graph<T>, inputs: &[Var]) -> Result<Var>;
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Per input: `max |analytic - numeric| / max(max |numeric|, max |analytic|)`.
    pub rel_errors: Vec<f64>,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }
}

fn evaluate<T: Real>(f: &impl GradFn, inputs: &[Tensor<f64>], training: bool, seed: u64) -> Result<f64> {
    let mut g = Graph::<T>::new(training, seed);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.cast())).collect();
    let out = f.eval(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(invalid("gradient check needs a scalar function"));
    }
    Ok(g.value(out).data()[0].as_f64())
}

/// Compare the analytic gradient in precision `T` against central
/// differences with step `h` in `f64`. A fixed `seed` keeps dropout masks
/// identical across all evaluations.
pub fn check_gradients<T: Real>(
    f: &impl GradFn,
    inputs: &[Tensor<f64>],
    h: f64,
    training: bool,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut g = Graph::<T>::new(training, seed);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.cast(), true)).collect();
    let out = f.eval(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| match g.grad(v) {
            Some(gr) => gr.data().iter().map(|x| x.as_f64()).collect(),
            None => vec![0.0; t.numel()],
        })
        .collect();

    let mut numeric = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for k in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[k].numel()];
        for (j, slot) in grad.iter_mut().enumerate() {
            let orig = work[k].data()[j];
            work[k].data_mut()[j] = orig + h;
            let plus = evaluate::<f64>(f, &work, training, seed)?;
            work[k].data_mut()[j] = orig - h;
            let minus = evaluate::<f64>(f, &work, training, seed)?;
            work[k].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        numeric.push(grad);
    }

    let rel_errors = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            let diff = a.iter().zip(n).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            let scale = a.iter().chain(n).fold(0.0f64, |m, x| m.max(x.abs()));
            if scale == 0.0 {
                0.0
            } else {
                diff / scale
            }
        })
        .collect();
    Ok(GradCheckReport {
        rel_errors,
        analytic,
        numeric,
    })
}
