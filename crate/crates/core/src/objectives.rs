//! Training losses and their logit gradients.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::prob::{softmax_unchecked, ProbMatrix};
use crate::threshold::PseudoBatch;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("loss component {0} is negative or non-finite")]
    NonFiniteComponent(&'static str),
}

/// Per-term loss values and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sup: f64,
    pub cls: f64,
    pub conf: f64,
    pub total: f64,
    pub retained_fraction: f64,
}

/// Multipliers on the three terms. The method uses all ones; other values
/// exist for ablations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sup: f64,
    pub cls: f64,
    pub conf: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { sup: 1.0, cls: 1.0, conf: 1.0 }
    }
}

/// `H(t, p) = −Σ tᵢ log max(pᵢ, 1e-12)`.
pub fn cross_entropy(target: &[f64], pred: &[f64]) -> Result<f64, LossError> {
    if target.len() != pred.len() {
        return Err(LossError::ShapeMismatch("target and prediction lengths differ"));
    }
    Ok(cross_entropy_unchecked(target, pred))
}

#[inline]
fn cross_entropy_unchecked(target: &[f64], pred: &[f64]) -> f64 {
    let mut h = 0.0;
    for (&t, &p) in target.iter().zip(pred) {
        if t != 0.0 {
            h -= t * math::floored_ln(p);
        }
    }
    h
}

/// `−log max(pred[class], 1e-12)`, the cross-entropy against a one-hot target.
#[inline]
pub fn cross_entropy_one_hot(class: usize, pred: &[f64]) -> f64 {
    -math::floored_ln(pred[class])
}

/// Mean labeled cross-entropy; zero when there are no labeled samples.
pub fn supervised_loss(labels: &[usize], preds: &ProbMatrix) -> Result<f64, LossError> {
    if labels.is_empty() {
        return Ok(0.0);
    }
    if labels.len() != preds.n() {
        return Err(LossError::ShapeMismatch("label count differs from prediction count"));
    }
    if labels.iter().any(|&c| c >= preds.k()) {
        return Err(LossError::ShapeMismatch("label exceeds class count"));
    }
    let sum: f64 = labels.iter().enumerate().map(|(j, &c)| cross_entropy_one_hot(c, preds.column(j))).sum();
    Ok(sum / labels.len() as f64)
}

/// `(1/N) Σᵢ H(q̃ᵢ, pᵢ)` between self-labels and predictions.
pub fn clustering_loss(q: &ProbMatrix, preds: &ProbMatrix) -> Result<f64, LossError> {
    if q.k() != preds.k() || q.n() != preds.n() {
        return Err(LossError::ShapeMismatch("self-labels and predictions differ in shape"));
    }
    let sum: f64 = q.columns().zip(preds.columns()).map(|(t, p)| cross_entropy_unchecked(t, p)).sum();
    Ok(sum / q.n() as f64)
}

/// Multi-view clustering loss: the self-labels (from the global view) are
/// matched against the global prediction and each of the `V` local-view
/// predictions, averaged over `(V + 1)·N` terms. With no local views this is
/// [`clustering_loss`].
pub fn clustering_loss_multiview(q: &ProbMatrix, global: &ProbMatrix, local: &[ProbMatrix]) -> Result<f64, LossError> {
    if local.is_empty() {
        return clustering_loss(q, global);
    }
    let shape_ok = |m: &ProbMatrix| m.k() == q.k() && m.n() == q.n();
    if !shape_ok(global) || !local.iter().all(shape_ok) {
        return Err(LossError::ShapeMismatch("views differ in shape"));
    }
    let mut sum = 0.0;
    for j in 0..q.n() {
        let t = q.column(j);
        sum += cross_entropy_unchecked(t, global.column(j));
        for view in local {
            sum += cross_entropy_unchecked(t, view.column(j));
        }
    }
    Ok(sum / ((local.len() + 1) * q.n()) as f64)
}

/// Masked pseudo-label cross-entropy on strong-view predictions, divided by
/// the full batch size rather than the retained count.
pub fn confidence_loss(pseudo: &PseudoBatch, strong: &ProbMatrix) -> Result<f64, LossError> {
    if pseudo.len() != strong.n() {
        return Err(LossError::ShapeMismatch("pseudo-batch and strong predictions differ in length"));
    }
    if strong.n() == 0 {
        return Ok(0.0);
    }
    if pseudo.labels.iter().any(|&c| c >= strong.k()) {
        return Err(LossError::ShapeMismatch("pseudo-label exceeds class count"));
    }
    let sum: f64 = (0..strong.n())
        .filter(|&j| pseudo.mask[j])
        .map(|j| cross_entropy_one_hot(pseudo.labels[j], strong.column(j)))
        .sum();
    Ok(sum / strong.n() as f64)
}

/// Unweighted sum of the three terms.
pub fn total_loss(sup: f64, cls: f64, conf: f64) -> Result<LossBreakdown, LossError> {
    total_loss_weighted(sup, cls, conf, &LossWeights::default())
}

/// Weighted sum; the stored components are the weighted ones so that
/// `total = sup + cls + conf` holds exactly.
pub fn total_loss_weighted(sup: f64, cls: f64, conf: f64, w: &LossWeights) -> Result<LossBreakdown, LossError> {
    for (name, v) in [("sup", sup), ("cls", cls), ("conf", conf)] {
        if !v.is_finite() || v < 0.0 {
            return Err(LossError::NonFiniteComponent(name));
        }
    }
    let (sup, cls, conf) = (w.sup * sup, w.cls * cls, w.conf * conf);
    Ok(LossBreakdown { sup, cls, conf, total: sup + cls + conf, retained_fraction: 0.0 })
}

/// Gradient of `H(target, softmax(logits))` with respect to the logits.
pub fn ce_logit_gradient(target: &[f64], logits: &[f64]) -> Result<Vec<f64>, LossError> {
    if target.len() != logits.len() {
        return Err(LossError::ShapeMismatch("target and logits lengths differ"));
    }
    if logits.iter().chain(target).any(|x| !x.is_finite()) {
        return Err(LossError::NonFiniteInput);
    }
    let p = softmax_unchecked(logits);
    Ok(p.iter().zip(target).map(|(p, t)| p - t).collect())
}
