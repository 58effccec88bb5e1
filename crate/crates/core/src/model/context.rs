//! Context inputs and their pooling into fixed-length context vectors.

use serde::{Deserialize, Serialize};

use super::{ContextKind, MotionMode, CONTEXT_DIM, MAX_CONTEXT_SOURCES, VISUAL_FEATURE_DIM};
use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{invalid, Result};
use crate::masks::Mask;
use crate::NUM_INSTRUMENTS;

/// Raw conditioning data for one example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextInput {
    /// Binary presence vector, one entry per instrument.
    Label(Vec<f32>),
    /// One `VISUAL_FEATURE_DIM` vector per present source.
    Visual(Vec<Vec<f32>>),
    /// A sequence of `VISUAL_FEATURE_DIM` vectors per present source.
    Motion(Vec<Vec<Vec<f32>>>),
}

/// A pooled context vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector {
    pub kind: ContextKind,
    pub payload: Vec<f32>,
}

fn check_frame(f: &[f32]) -> Result<()> {
    if f.len() != VISUAL_FEATURE_DIM {
        return Err(invalid(format!("feature vectors have {VISUAL_FEATURE_DIM} entries, got {}", f.len())));
    }
    if f.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite visual feature"));
    }
    Ok(())
}

fn check_sources(n: usize) -> Result<()> {
    if !(1..=MAX_CONTEXT_SOURCES).contains(&n) {
        return Err(invalid(format!("context needs 1..={MAX_CONTEXT_SOURCES} sources, got {n}")));
    }
    Ok(())
}

impl ContextInput {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Label(l) => {
                if l.len() != NUM_INSTRUMENTS || l.iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(invalid(format!("label context must be {NUM_INSTRUMENTS} binary values")));
                }
            }
            Self::Visual(frames) => {
                check_sources(frames.len())?;
                frames.iter().try_for_each(|f| check_frame(f))?;
            }
            Self::Motion(seqs) => {
                check_sources(seqs.len())?;
                for s in seqs {
                    if s.is_empty() {
                        return Err(invalid("empty frame sequence"));
                    }
                    s.iter().try_for_each(|f| check_frame(f))?;
                }
            }
        }
        Ok(())
    }

    pub fn matches(&self, kind: ContextKind) -> bool {
        matches!(
            (self, kind),
            (Self::Label(_), ContextKind::Label) | (Self::Visual(_), ContextKind::Visual) | (Self::Motion(_), ContextKind::Motion(_))
        )
    }
}

fn rows<T: Real>(g: &mut Graph<T>, rows: &[&[f32]]) -> Var {
    let d = rows[0].len();
    g.input(Tensor::from_fn(&[rows.len(), d], |i| T::of(rows[i / d][i % d] as f64)))
}

/// `(S, 2048)` features to `(1, 1024)`: pairwise max pool, then max over sources.
pub(crate) fn visual_var<T: Real>(g: &mut Graph<T>, frames: &[Vec<f32>]) -> Result<Var> {
    let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
    let x = rows(g, &refs);
    let pooled = g.adaptive_maxpool1d(x, CONTEXT_DIM)?;
    g.channelwise_max(pooled)
}

/// Max over all frames of all sources, then pairwise max pool.
pub(crate) fn motion_maxpool_var<T: Real>(g: &mut Graph<T>, seqs: &[Vec<Vec<f32>>]) -> Result<Var> {
    let refs: Vec<&[f32]> = seqs.iter().flatten().map(Vec::as_slice).collect();
    let x = rows(g, &refs);
    let m = g.channelwise_max(x)?;
    g.adaptive_maxpool1d(m, CONTEXT_DIM)
}

/// Runs a one-off graph and extracts its `(1, D)` output.
fn eval_context(kind: ContextKind, f: impl FnOnce(&mut Graph<f32>) -> Result<Var>) -> Result<ContextVector> {
    let mut g = Graph::<f32>::new(false, 0);
    let v = f(&mut g)?;
    Ok(ContextVector {
        kind,
        payload: g.value(v).data().to_vec(),
    })
}

/// Visual context from one feature vector per source.
pub fn pool_visual_context(frames: &[Vec<f32>]) -> Result<ContextVector> {
    let input = ContextInput::Visual(frames.to_vec());
    input.validate()?;
    eval_context(ContextKind::Visual, |g| visual_var(g, frames))
}

/// Motion context without learned weights: max over frames and sources.
pub fn motion_maxpool_context(seqs: &[Vec<Vec<f32>>]) -> Result<ContextVector> {
    ContextInput::Motion(seqs.to_vec()).validate()?;
    eval_context(ContextKind::Motion(MotionMode::Maxpool), |g| motion_maxpool_var(g, seqs))
}

/// `M̂_i = weights[i] · M_i`.
pub fn condition_masks_multiply(raw_masks: &[Mask], weights: &[f32]) -> Result<Vec<Mask>> {
    if raw_masks.len() != weights.len() {
        return Err(invalid(format!("{} masks but {} weights", raw_masks.len(), weights.len())));
    }
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(invalid("mask weights must lie in [0, 1]"));
    }
    raw_masks
        .iter()
        .zip(weights)
        .map(|(m, &w)| Mask::new(m.values.mapv(|v| w * v), m.kind, m.instrument))
        .collect()
}
