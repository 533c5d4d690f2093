//! Seen/novel hierarchical confidence thresholds.
//!
//! Each class `c` tracks `ζ_c`, the EMA of the mean max-confidence over
//! samples whose argmax is `c`. Each group (seen, novel) tracks `η`, the same
//! statistic pooled over the group. The threshold of class `c` in group `G` is
//! `τ(c) = ζ_c / max_{c' ∈ G} ζ_{c'} · η(G)`.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;
use crate::prob::{PartitionSpec, ProbMatrix};

pub const DEFAULT_MOMENTUM: f64 = 0.999;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThresholdError {
    #[error("expected {expected} classes, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("class {0} is out of range")]
    ClassOutOfRange(usize),
    #[error("every class-wise status in the group of class {0} is zero")]
    DegenerateGroup(usize),
    #[error("momentum must lie in [0, 1], got {0}")]
    InvalidMomentum(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub zeta: Vec<f64>,
    pub eta_seen: f64,
    pub eta_novel: f64,
    pub momentum: f64,
    pub partition: PartitionSpec,
}

/// Pseudo-labels from weak-view predictions and the samples they retain.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoBatch {
    pub mask: Vec<bool>,
    pub labels: Vec<usize>,
    pub confidences: Vec<f64>,
}

impl PseudoBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn retained_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

impl ThresholdState {
    /// Starts every `ζ` and `η` at `1/K`.
    pub fn new(partition: PartitionSpec, momentum: f64) -> Result<Self, ThresholdError> {
        // momentum = 1 freezes the state; allowed for tests and ablations.
        if !(0.0..=1.0).contains(&momentum) {
            return Err(ThresholdError::InvalidMomentum(momentum));
        }
        let k = partition.k_total();
        let init = 1.0 / k as f64;
        Ok(Self { zeta: vec![init; k], eta_seen: init, eta_novel: init, momentum, partition })
    }

    pub fn k(&self) -> usize {
        self.zeta.len()
    }

    fn check_shape(&self, probs: &ProbMatrix) -> Result<(), ThresholdError> {
        if probs.k() != self.k() {
            return Err(ThresholdError::ShapeMismatch { expected: self.k(), got: probs.k() });
        }
        Ok(())
    }

    /// Folds one batch of predictions into the EMA statistics. Classes and
    /// groups that receive no samples keep their previous value.
    pub fn update(&mut self, probs: &ProbMatrix) -> Result<(), ThresholdError> {
        self.check_shape(probs)?;
        let k = self.k();
        let mut class_sum = vec![0.0; k];
        let mut class_n = vec![0usize; k];
        let (mut seen_sum, mut seen_n, mut novel_sum, mut novel_n) = (0.0, 0usize, 0.0, 0usize);
        for col in probs.columns() {
            let c = math::argmax(col);
            let conf = col[c];
            class_sum[c] += conf;
            class_n[c] += 1;
            if self.partition.is_seen(c) {
                seen_sum += conf;
                seen_n += 1;
            } else {
                novel_sum += conf;
                novel_n += 1;
            }
        }
        let m = self.momentum;
        let ema = |old: f64, batch: f64| m * old + (1.0 - m) * batch;
        for c in 0..k {
            if class_n[c] > 0 {
                self.zeta[c] = ema(self.zeta[c], class_sum[c] / class_n[c] as f64);
            }
        }
        if seen_n > 0 {
            self.eta_seen = ema(self.eta_seen, seen_sum / seen_n as f64);
        }
        if novel_n > 0 {
            self.eta_novel = ema(self.eta_novel, novel_sum / novel_n as f64);
        }
        Ok(())
    }

    pub fn eta_of(&self, class: usize) -> f64 {
        if self.partition.is_seen(class) {
            self.eta_seen
        } else {
            self.eta_novel
        }
    }

    /// `τ(c)`.
    pub fn threshold(&self, class: usize) -> Result<f64, ThresholdError> {
        if class >= self.k() {
            return Err(ThresholdError::ClassOutOfRange(class));
        }
        let group_max = self.partition.group_of(class).iter().map(|&c| self.zeta[c]).fold(0.0, f64::max);
        if group_max <= 0.0 {
            return Err(ThresholdError::DegenerateGroup(class));
        }
        Ok(self.zeta[class] / group_max * self.eta_of(class))
    }

    /// All K thresholds.
    pub fn thresholds(&self) -> Result<Vec<f64>, ThresholdError> {
        (0..self.k()).map(|c| self.threshold(c)).collect()
    }

    /// Argmax pseudo-labels and the strict `confidence > τ(label)` mask.
    pub fn pseudo_batch(&self, probs: &ProbMatrix) -> Result<PseudoBatch, ThresholdError> {
        self.check_shape(probs)?;
        let tau = self.thresholds()?;
        Ok(pseudo_batch_with(probs, |c| tau[c]))
    }
}

/// Pseudo-batch under an arbitrary per-class threshold rule.
pub fn pseudo_batch_with(probs: &ProbMatrix, tau: impl Fn(usize) -> f64) -> PseudoBatch {
    let n = probs.n();
    let mut out =
        PseudoBatch { mask: Vec::with_capacity(n), labels: Vec::with_capacity(n), confidences: Vec::with_capacity(n) };
    for col in probs.columns() {
        let c = math::argmax(col);
        out.labels.push(c);
        out.confidences.push(col[c]);
        out.mask.push(col[c] > tau(c));
    }
    out
}

/// Functional form of [`ThresholdState::update`].
pub fn update_state(state: &ThresholdState, probs: &ProbMatrix) -> Result<ThresholdState, ThresholdError> {
    let mut next = state.clone();
    next.update(probs)?;
    Ok(next)
}

pub fn hierarchical_threshold(state: &ThresholdState, class: usize) -> Result<f64, ThresholdError> {
    state.threshold(class)
}

pub fn make_pseudo_batch(state: &ThresholdState, probs: &ProbMatrix) -> Result<PseudoBatch, ThresholdError> {
    state.pseudo_batch(probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn part(k: usize, seen: &[usize]) -> PartitionSpec {
        PartitionSpec::from_seen(k, seen.to_vec(), 1, 1).unwrap()
    }

    fn cols(k: usize, columns: &[&[f64]]) -> ProbMatrix {
        let v: Vec<Vec<f64>> = columns.iter().map(|c| c.to_vec()).collect();
        ProbMatrix::from_columns(k, &v).unwrap()
    }

    #[test]
    fn zero_momentum_takes_batch_statistic() {
        let mut s = ThresholdState::new(part(3, &[0, 1]), 0.0).unwrap();
        let before = s.zeta.clone();
        s.update(&cols(3, &[&[0.9, 0.05, 0.05], &[0.9, 0.1, 0.0]])).unwrap();
        assert_eq!(s.zeta[0], 0.9);
        assert_eq!(&s.zeta[1..], &before[1..]);
        assert_eq!(s.eta_seen, 0.9);
        assert_eq!(s.eta_novel, before[2]);
    }

    #[test]
    fn unit_momentum_freezes_state() {
        let mut s = ThresholdState::new(part(2, &[0]), 1.0).unwrap();
        let before = s.clone();
        s.update(&cols(2, &[&[0.2, 0.8], &[0.7, 0.3]])).unwrap();
        assert_eq!(s, before);
    }

    #[test]
    fn half_momentum_averages() {
        let mut s = ThresholdState::new(part(2, &[0, 1]), 0.5).unwrap();
        s.zeta[0] = 0.4;
        s.update(&cols(2, &[&[0.8, 0.2]])).unwrap();
        assert!((s.zeta[0] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn threshold_examples() {
        let mut s = ThresholdState::new(part(3, &[0, 1]), 0.9).unwrap();
        s.zeta = vec![0.9, 0.6, 0.3];
        s.eta_seen = 0.8;
        s.eta_novel = 0.5;
        assert!((s.threshold(0).unwrap() - 0.8).abs() < 1e-12);
        assert!((s.threshold(1).unwrap() - 0.533_333_333_333_333_3).abs() < 1e-12);
        // single-class novel group
        assert_eq!(s.threshold(2).unwrap(), 0.5);
        s.zeta[1] = 0.0;
        assert_eq!(s.threshold(1).unwrap(), 0.0);
        s.zeta = vec![0.0, 0.0, 0.3];
        assert_eq!(s.threshold(0), Err(ThresholdError::DegenerateGroup(0)));
    }

    #[test]
    fn pseudo_batch_examples() {
        let mut s = ThresholdState::new(part(2, &[0]), 0.9).unwrap();
        s.zeta = vec![0.9, 0.8];
        s.eta_seen = 0.9;
        s.eta_novel = 0.8;
        let b = s.pseudo_batch(&cols(2, &[&[0.95, 0.05]])).unwrap();
        assert_eq!((b.mask[0], b.labels[0]), (true, 0));

        let b = s.pseudo_batch(&cols(2, &[&[0.5, 0.5]])).unwrap();
        assert_eq!((b.mask[0], b.labels[0]), (false, 0));

        let b = s.pseudo_batch(&cols(2, &[&[0.95, 0.05], &[0.3, 0.7], &[0.15, 0.85]])).unwrap();
        assert_eq!(b.labels, [0, 1, 1]);
        assert_eq!(b.mask, [true, false, true]);
    }

    #[test]
    fn ties_at_threshold_are_rejected() {
        let b = pseudo_batch_with(&cols(2, &[&[0.75, 0.25]]), |_| 0.75);
        assert!(!b.mask[0]);
    }

    #[test]
    fn shape_checked() {
        let mut s = ThresholdState::new(part(3, &[0]), 0.9).unwrap();
        assert!(matches!(s.update(&ProbMatrix::uniform(2, 1)), Err(ThresholdError::ShapeMismatch { .. })));
    }

    #[test]
    fn single_group_equal_zeta_is_global_threshold() {
        let mut s = ThresholdState::new(part(4, &[0, 1, 2, 3]), 0.9).unwrap();
        s.zeta = vec![0.7; 4];
        s.eta_seen = 0.85;
        assert!(s.thresholds().unwrap().iter().all(|&t| t == 0.85));
    }

    proptest! {
        #[test]
        fn raising_zeta_never_lowers_tau(
            zeta in prop::collection::vec(0.01f64..1.0, 4),
            bump in 0.0f64..0.5,
            c in 0usize..4,
        ) {
            let mut s = ThresholdState::new(part(4, &[0, 1]), 0.9).unwrap();
            s.zeta = zeta;
            s.eta_seen = 0.7;
            s.eta_novel = 0.4;
            let before = s.threshold(c).unwrap();
            s.zeta[c] = (s.zeta[c] + bump).min(1.0);
            prop_assert!(s.threshold(c).unwrap() >= before - 1e-15);
        }
    }
}
