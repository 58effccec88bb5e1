//! Mask training objectives: weighted binary cross entropy and L2.
//!
//! Both reduce by summation over instruments and bins.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{invalid, Result};
use crate::masks::{Mask, MaskKind};

/// Default probability clamp for BCE.
pub const CLAMP_EPS: f64 = 1e-7;
/// Bounds applied to the class-balance weight when estimated from data.
pub const LAMBDA_RANGE: (f64, f64) = (1.0, 20.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    L2,
}

impl LossKind {
    /// The mask kind this loss trains against.
    pub fn mask_kind(self) -> MaskKind {
        match self {
            LossKind::Bce => MaskKind::Binary,
            LossKind::L2 => MaskKind::Ratio,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Positive-class weight for BCE. `None` estimates it per batch with
    /// [`default_lambda`].
    pub lambda: Option<f64>,
    pub clamp_eps: f64,
}

impl LossConfig {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            lambda: None,
            clamp_eps: CLAMP_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return Err(invalid(format!("lambda must be positive, got {l}")));
            }
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return Err(invalid(format!("clamp_eps out of range: {}", self.clamp_eps)));
        }
        Ok(())
    }
}

/// `#negative / #positive` target bins, clamped to [`LAMBDA_RANGE`].
/// Targets without positives give the lower bound.
pub fn default_lambda<T: Real>(target: &[T]) -> f64 {
    let pos = target.iter().filter(|&&t| t > T::zero()).count();
    if pos == 0 {
        return LAMBDA_RANGE.0;
    }
    let neg = target.len() - pos;
    (neg as f64 / pos as f64).clamp(LAMBDA_RANGE.0, LAMBDA_RANGE.1)
}

/// Adds the configured loss between `pred` and `target` to the graph.
pub fn mask_loss<T: Real>(g: &mut Graph<T>, pred: Var, target: &Tensor<T>, cfg: &LossConfig) -> Result<Var> {
    cfg.validate()?;
    if g.shape(pred) != target.shape() {
        return Err(invalid(format!(
            "prediction shape {:?} differs from target shape {:?}",
            g.shape(pred),
            target.shape()
        )));
    }
    match cfg.kind {
        LossKind::L2 => g.squared_error(pred, target),
        LossKind::Bce => {
            let lambda = cfg.lambda.unwrap_or_else(|| default_lambda(target.data()));
            g.weighted_bce(pred, target, lambda, cfg.clamp_eps)
        }
    }
}

fn check_masks(pred: &[Mask], gt: &[Mask]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(invalid(format!("{} predicted masks vs {} targets", pred.len(), gt.len())));
    }
    for (p, t) in pred.iter().zip(gt) {
        if p.shape() != t.shape() {
            return Err(invalid(format!("mask shape {:?} vs {:?}", p.shape(), t.shape())));
        }
    }
    Ok(())
}

/// `-Σ [λ·M ln M̂ + (1 - M) ln(1 - M̂)]` with `M̂` clamped to `[eps, 1 - eps]`.
pub fn bce_mask_loss(pred: &[Mask], gt: &[Mask], lambda: f64, eps: f64) -> Result<f64> {
    check_masks(pred, gt)?;
    if gt.iter().any(|m| m.kind != MaskKind::Binary) {
        return Err(invalid("bce targets must be binary masks"));
    }
    let mut total = 0.0;
    for (p, t) in pred.iter().zip(gt) {
        for (&p, &t) in p.values.iter().zip(t.values.iter()) {
            let p = (p as f64).clamp(eps, 1.0 - eps);
            let t = t as f64;
            total -= lambda * t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        }
    }
    Ok(total)
}

/// `Σ_i ‖M_i - M̂_i‖²`.
pub fn l2_mask_loss(pred: &[Mask], gt: &[Mask]) -> Result<f64> {
    check_masks(pred, gt)?;
    Ok(pred
        .iter()
        .zip(gt)
        .flat_map(|(p, t)| p.values.iter().zip(t.values.iter()))
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum())
}
