//! Estimators of the unlabeled class distribution and their reliability.
//!
//! Labeled class counts are `Nˡ ~ Multinomial(Nˡ, 𝓟ˡ)`. The population prior
//! satisfies `N·pᵢ = Nˡ·pˡᵢ + Nᵘ·pᵘᵢ`. Two estimators of the unlabeled class
//! counts are compared:
//!
//! * unconditional: `A = Nᵘ·𝓟`, a constant, biased whenever `𝓟 ≠ 𝓟ᵘ`;
//! * conditional: `Aᵢ = N·pᵢ − Nᵢˡ`, unbiased for `Nᵘ·𝓟ᵘ`.
//!
//! Reliability is the expected chi-square statistic (ECS) of `A` against
//! `Nᵘ·𝓟ᵘ`. Closed forms live next to a chunked Monte Carlo estimator whose
//! result does not depend on how chunks are scheduled across threads.

use alloc::vec;
use alloc::vec::Vec;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, pairwise_sum};
use crate::prob::{ClassPrior, ProbError};
use crate::rng::Rng;

/// Trials per Monte Carlo chunk. Chunk `c` draws from its own stream.
pub const CHUNK_TRIALS: u64 = 4096;

/// Tolerance on the prior consistency identity.
pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("priors have different lengths")]
    ShapeMismatch,
    #[error("need at least one unlabeled sample")]
    NoUnlabeled,
    #[error("prior is inconsistent with the labeled/unlabeled mixture at class {class} (deviation {deviation:e})")]
    InconsistentPrior { class: usize, deviation: f64 },
    #[error("labeled counts sum to {got}, expected {expected}")]
    CountMismatch { expected: u64, got: u64 },
    #[error("expected count {1} for class {0} is not positive")]
    NonPositiveExpected(usize, f64),
    #[error("unlabeled probability of class {0} is zero")]
    ZeroUnlabeledMass(usize),
    #[error("need at least one trial")]
    NoTrials,
    #[error(transparent)]
    Prob(#[from] ProbError),
}

/// Sampling population: labeled and unlabeled class distributions and sizes.
/// The overall prior is derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSpec {
    prior: ClassPrior,
    prior_labeled: ClassPrior,
    prior_unlabeled: ClassPrior,
    n_labeled: u64,
    n_unlabeled: u64,
}

impl PopulationSpec {
    pub fn new(
        prior_labeled: ClassPrior,
        prior_unlabeled: ClassPrior,
        n_labeled: u64,
        n_unlabeled: u64,
    ) -> Result<Self, TheoryError> {
        if prior_labeled.k() != prior_unlabeled.k() {
            return Err(TheoryError::ShapeMismatch);
        }
        if n_unlabeled == 0 {
            return Err(TheoryError::NoUnlabeled);
        }
        let (nl, nu) = (n_labeled as f64, n_unlabeled as f64);
        let n = nl + nu;
        let derived: Vec<f64> = prior_labeled
            .as_slice()
            .iter()
            .zip(prior_unlabeled.as_slice())
            .map(|(&pl, &pu)| (nl * pl + nu * pu) / n)
            .collect();
        let prior = ClassPrior::new(derived)?;
        Ok(Self { prior, prior_labeled, prior_unlabeled, n_labeled, n_unlabeled })
    }

    /// Like [`PopulationSpec::new`], additionally checking a caller-supplied
    /// prior against `N·pᵢ = Nˡ·pˡᵢ + Nᵘ·pᵘᵢ`.
    pub fn with_prior(
        prior: &ClassPrior,
        prior_labeled: ClassPrior,
        prior_unlabeled: ClassPrior,
        n_labeled: u64,
        n_unlabeled: u64,
    ) -> Result<Self, TheoryError> {
        let spec = Self::new(prior_labeled, prior_unlabeled, n_labeled, n_unlabeled)?;
        if prior.k() != spec.k() {
            return Err(TheoryError::ShapeMismatch);
        }
        for (class, (a, b)) in prior.as_slice().iter().zip(spec.prior.as_slice()).enumerate() {
            let deviation = (a - b).abs();
            if deviation > IDENTITY_TOL {
                return Err(TheoryError::InconsistentPrior { class, deviation });
            }
        }
        Ok(spec)
    }

    pub fn k(&self) -> usize {
        self.prior.k()
    }

    pub fn prior(&self) -> &ClassPrior {
        &self.prior
    }

    pub fn prior_labeled(&self) -> &ClassPrior {
        &self.prior_labeled
    }

    pub fn prior_unlabeled(&self) -> &ClassPrior {
        &self.prior_unlabeled
    }

    pub fn n_labeled(&self) -> u64 {
        self.n_labeled
    }

    pub fn n_unlabeled(&self) -> u64 {
        self.n_unlabeled
    }

    pub fn n_total(&self) -> u64 {
        self.n_labeled + self.n_unlabeled
    }

    /// Classes with labeled mass.
    pub fn seen(&self) -> Vec<usize> {
        (0..self.k()).filter(|&i| self.prior_labeled.get(i) > 0.0).collect()
    }

    /// Classes without labeled mass.
    pub fn novel(&self) -> Vec<usize> {
        (0..self.k()).filter(|&i| self.prior_labeled.get(i) == 0.0).collect()
    }

    /// Expected unlabeled counts `Nᵘ·𝓟ᵘ`.
    pub fn expected_unlabeled(&self) -> Vec<f64> {
        let nu = self.n_unlabeled as f64;
        self.prior_unlabeled.as_slice().iter().map(|p| nu * p).collect()
    }
}

/// Estimated unlabeled class counts `A` and the distribution `μ̂ = A/Nᵘ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub counts: Vec<f64>,
    pub distribution: Vec<f64>,
}

/// Multinomial draw by sequential conditional binomials.
pub fn sample_multinomial(n: u64, probs: &ClassPrior, rng: &mut Rng) -> Vec<u64> {
    let p = probs.as_slice();
    let k = p.len();
    let mut out = vec![0u64; k];
    // Tail masses from the back so the last class with mass gets probability 1.
    let mut tail = vec![0.0; k + 1];
    for i in (0..k).rev() {
        tail[i] = tail[i + 1] + p[i];
    }
    let mut remaining = n;
    for i in 0..k {
        if remaining == 0 {
            break;
        }
        if p[i] <= 0.0 {
            continue;
        }
        let cp = (p[i] / tail[i]).min(1.0);
        let draw = if cp >= 1.0 {
            remaining
        } else {
            Binomial::new(remaining, cp).expect("probability in [0, 1]").sample(rng)
        };
        out[i] = draw;
        remaining -= draw;
    }
    out
}

/// `Σ (oᵢ − eᵢ)² / eᵢ`.
pub fn chi_square_statistic(observed: &[f64], expected: &[f64]) -> Result<f64, TheoryError> {
    if observed.len() != expected.len() {
        return Err(TheoryError::ShapeMismatch);
    }
    let mut chi = 0.0;
    for (i, (&o, &e)) in observed.iter().zip(expected).enumerate() {
        if !(e > 0.0) {
            return Err(TheoryError::NonPositiveExpected(i, e));
        }
        let d = o - e;
        chi += d * d / e;
    }
    Ok(chi)
}

/// Chi-square statistic for integer counts.
pub fn chi_square_counts(observed: &[u64], expected: &[f64]) -> Result<f64, TheoryError> {
    let obs: Vec<f64> = observed.iter().map(|&c| c as f64).collect();
    chi_square_statistic(&obs, expected)
}

/// `A = Nᵘ·𝓟`, `μ̂ = 𝓟`.
pub fn estimator_uncon(spec: &PopulationSpec) -> Estimate {
    let nu = spec.n_unlabeled as f64;
    Estimate {
        counts: spec.prior.as_slice().iter().map(|p| nu * p).collect(),
        distribution: spec.prior.as_slice().to_vec(),
    }
}

/// `Aᵢ = N·pᵢ − Nᵢˡ`, `μ̂ = A/Nᵘ`. Not clamped: extreme draws may give
/// negative entries.
pub fn estimator_con(spec: &PopulationSpec, labeled_counts: &[u64]) -> Result<Estimate, TheoryError> {
    if labeled_counts.len() != spec.k() {
        return Err(TheoryError::ShapeMismatch);
    }
    let got: u64 = labeled_counts.iter().sum();
    if got != spec.n_labeled {
        return Err(TheoryError::CountMismatch { expected: spec.n_labeled, got });
    }
    let n = spec.n_total() as f64;
    let nu = spec.n_unlabeled as f64;
    let counts: Vec<f64> = spec.prior.as_slice().iter().zip(labeled_counts).map(|(&p, &c)| n * p - c as f64).collect();
    let distribution = counts.iter().map(|a| a / nu).collect();
    Ok(Estimate { counts, distribution })
}

/// `Σ Nᵘ(pᵢ − pᵘᵢ)² / pᵘᵢ`.
pub fn ecs_uncon_closed(spec: &PopulationSpec) -> Result<f64, TheoryError> {
    let nu = spec.n_unlabeled as f64;
    let mut ecs = 0.0;
    for (i, (&p, &pu)) in spec.prior.as_slice().iter().zip(spec.prior_unlabeled.as_slice()).enumerate() {
        if p == pu {
            continue;
        }
        if pu <= 0.0 {
            return Err(TheoryError::ZeroUnlabeledMass(i));
        }
        ecs += nu * (p - pu) * (p - pu) / pu;
    }
    Ok(ecs)
}

/// `Σ Nˡ pˡᵢ(1 − pˡᵢ) / (Nᵘ pᵘᵢ)`.
pub fn ecs_con_closed(spec: &PopulationSpec) -> Result<f64, TheoryError> {
    let (nl, nu) = (spec.n_labeled as f64, spec.n_unlabeled as f64);
    let mut ecs = 0.0;
    for (i, (&pl, &pu)) in spec.prior_labeled.as_slice().iter().zip(spec.prior_unlabeled.as_slice()).enumerate() {
        let var = nl * pl * (1.0 - pl);
        if var == 0.0 {
            continue;
        }
        if pu <= 0.0 {
            return Err(TheoryError::ZeroUnlabeledMass(i));
        }
        ecs += var / (nu * pu);
    }
    Ok(ecs)
}

/// Evaluation of the sufficient condition for `ECS_con ≤ ECS_uncon`, with
/// `rᵢ = Nˡpˡᵢ/N` and `r = Σ rᵢ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderingCheck {
    /// `√Nᵘ·|rᵢ − r·pᵘᵢ| > 1` for every seen `i` and `√Nᵘ·r·pⱼ > 1` for every
    /// novel `j`; false when there are no labels.
    pub per_class_bound: bool,
    /// `Nˡ·pˡᵢ(1 − pˡᵢ) ≤ Nᵘ` for every class, which the bound needs so each
    /// labeled-variance term stays below one.
    pub variance_bound: bool,
    /// `√Nᵘ·max(|rᵢ − r·pᵘᵢ|, r·pⱼ) > 1` over all seen `i` and all `j` with
    /// unlabeled mass. Reported only; it does not imply the ordering.
    pub max_over_pairs: bool,
    /// `per_class_bound && variance_bound`.
    pub holds: bool,
}

pub fn ordering_check(spec: &PopulationSpec) -> OrderingCheck {
    let k = spec.k();
    let (nl, nu) = (spec.n_labeled as f64, spec.n_unlabeled as f64);
    let n = nl + nu;
    let pl = spec.prior_labeled.as_slice();
    let pu = spec.prior_unlabeled.as_slice();
    let p = spec.prior.as_slice();
    let r_i: Vec<f64> = pl.iter().map(|&x| nl * x / n).collect();
    let r: f64 = r_i.iter().sum();
    let root = math::sqrt(nu);
    let seen: Vec<usize> = (0..k).filter(|&i| pl[i] > 0.0).collect();
    let dev = |i: usize| (r_i[i] - r * pu[i]).abs();

    let labeled = spec.n_labeled > 0 && !seen.is_empty();
    let per_class_bound =
        labeled && (0..k).all(|i| if pl[i] > 0.0 { root * dev(i) > 1.0 } else { root * r * p[i] > 1.0 });
    let variance_bound = (0..k).all(|i| nl * pl[i] * (1.0 - pl[i]) <= nu);
    let max_over_pairs =
        labeled && seen.iter().all(|&i| (0..k).filter(|&j| pu[j] > 0.0).all(|j| root * dev(i).max(r * p[j]) > 1.0));
    OrderingCheck { per_class_bound, variance_bound, max_over_pairs, holds: per_class_bound && variance_bound }
}

/// True when the sufficient condition for `ECS_con ≤ ECS_uncon` holds.
pub fn ordering_condition(spec: &PopulationSpec) -> bool {
    ordering_check(spec).holds
}

/// Running sums for one or more Monte Carlo chunks. Deviations are taken
/// from the known targets to keep the second moments well conditioned.
#[derive(Debug, Clone, PartialEq)]
pub struct EcsAccumulator {
    pub trials: u64,
    chi_con: f64,
    chi_con_sq: f64,
    bias: Vec<f64>,
    bias_sq: Vec<f64>,
}

impl EcsAccumulator {
    fn zero(k: usize) -> Self {
        Self { trials: 0, chi_con: 0.0, chi_con_sq: 0.0, bias: vec![0.0; k], bias_sq: vec![0.0; k] }
    }

    pub fn merge(mut self, other: &Self) -> Self {
        self.trials += other.trials;
        self.chi_con += other.chi_con;
        self.chi_con_sq += other.chi_con_sq;
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
        for (a, b) in self.bias_sq.iter_mut().zip(&other.bias_sq) {
            *a += b;
        }
        self
    }
}

/// Pairwise reduction of chunk accumulators in chunk order.
pub fn reduce_chunks(chunks: &[EcsAccumulator]) -> Option<EcsAccumulator> {
    match chunks.len() {
        0 => None,
        1 => Some(chunks[0].clone()),
        n => {
            let (a, b) = chunks.split_at(n / 2);
            Some(reduce_chunks(a)?.merge(&reduce_chunks(b)?))
        }
    }
}

/// Number of chunks and the trial count of each.
pub fn chunk_plan(trials: u64) -> Vec<u64> {
    let full = trials / CHUNK_TRIALS;
    let rest = trials % CHUNK_TRIALS;
    let mut plan = vec![CHUNK_TRIALS; full as usize];
    if rest > 0 {
        plan.push(rest);
    }
    plan
}

fn chunk_stream(base: &Rng, chunk: usize) -> Rng {
    base.derive(base.stream().wrapping_shl(32) | chunk as u64)
}

/// Classes entering the chi-square: those with unlabeled mass. A class with
/// neither labeled nor unlabeled mass contributes nothing and is skipped.
fn chi_classes(spec: &PopulationSpec) -> Result<Vec<usize>, TheoryError> {
    let mut classes = Vec::new();
    for i in 0..spec.k() {
        let (pl, pu) = (spec.prior_labeled.get(i), spec.prior_unlabeled.get(i));
        if pu > 0.0 {
            classes.push(i);
        } else if pl > 0.0 {
            return Err(TheoryError::ZeroUnlabeledMass(i));
        }
    }
    Ok(classes)
}

/// Expected conditional chi-square and the (constant) unconditional one;
/// chunk sums are kept as deviations from these.
fn chi_shifts(spec: &PopulationSpec, classes: &[usize]) -> (f64, f64) {
    let expected = spec.expected_unlabeled();
    let nl = spec.n_labeled as f64;
    let pl = spec.prior_labeled.as_slice();
    let con = classes.iter().map(|&i| nl * pl[i] * (1.0 - pl[i]) / expected[i]).sum();
    let uncon = estimator_uncon(spec);
    let chi_uncon = classes
        .iter()
        .map(|&i| {
            let d = uncon.counts[i] - expected[i];
            d * d / expected[i]
        })
        .sum();
    (con, chi_uncon)
}

/// Runs one chunk of trials on its own stream.
pub fn monte_carlo_chunk(
    spec: &PopulationSpec,
    base: &Rng,
    chunk: usize,
    trials: u64,
) -> Result<EcsAccumulator, TheoryError> {
    let classes = chi_classes(spec)?;
    let k = spec.k();
    let mut rng = chunk_stream(base, chunk);
    let expected = spec.expected_unlabeled();
    let pu = spec.prior_unlabeled.as_slice();
    let n = spec.n_total() as f64;
    let nu = spec.n_unlabeled as f64;
    let prior = spec.prior.as_slice();

    let (con_shift, _) = chi_shifts(spec, &classes);

    let mut acc = EcsAccumulator::zero(k);
    for _ in 0..trials {
        let counts = sample_multinomial(spec.n_labeled, &spec.prior_labeled, &mut rng);
        let mut chi = 0.0;
        for i in 0..k {
            let a = n * prior[i] - counts[i] as f64;
            let dev = a / nu - pu[i];
            acc.bias[i] += dev;
            acc.bias_sq[i] += dev * dev;
        }
        for &i in &classes {
            let d = n * prior[i] - counts[i] as f64 - expected[i];
            chi += d * d / expected[i];
        }
        let dev = chi - con_shift;
        acc.chi_con += dev;
        acc.chi_con_sq += dev * dev;
    }
    acc.trials = trials;
    Ok(acc)
}

/// Closed-form and Monte Carlo reliability of both estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcsReport {
    pub k: usize,
    pub n_labeled: u64,
    pub n_unlabeled: u64,
    pub prior: Vec<f64>,
    pub prior_labeled: Vec<f64>,
    pub prior_unlabeled: Vec<f64>,
    pub ecs_uncon_closed: f64,
    pub ecs_con_closed: f64,
    pub ecs_uncon_empirical: f64,
    pub ecs_uncon_se: f64,
    pub ecs_con_empirical: f64,
    pub ecs_con_se: f64,
    /// Monte Carlo mean of `μ̂_con − 𝓟ᵘ`.
    pub bias_con: Vec<f64>,
    pub bias_con_se: Vec<f64>,
    /// `𝓟 − 𝓟ᵘ`, exact.
    pub bias_uncon: Vec<f64>,
    pub ordering_condition: bool,
    pub ordering: OrderingCheck,
    pub trials: u64,
    pub seed: u64,
}

/// Mean and standard error from sums of deviations about `shift`.
fn mean_se(shift: f64, sum: f64, sum_sq: f64, n: u64) -> (f64, f64) {
    let nf = n as f64;
    let d = sum / nf;
    if n < 2 {
        return (shift + d, 0.0);
    }
    let var = ((sum_sq - nf * d * d) / (nf - 1.0)).max(0.0);
    (shift + d, math::sqrt(var / nf))
}

/// Assembles a report from reduced chunk sums.
pub fn ecs_report(spec: &PopulationSpec, acc: &EcsAccumulator, seed: u64) -> Result<EcsReport, TheoryError> {
    let (con_shift, chi_uncon) = chi_shifts(spec, &chi_classes(spec)?);
    let (ecs_con_empirical, ecs_con_se) = mean_se(con_shift, acc.chi_con, acc.chi_con_sq, acc.trials);
    // The unconditional estimate is the same in every trial.
    let (ecs_uncon_empirical, ecs_uncon_se) = (chi_uncon, 0.0);
    let (bias_con, bias_con_se): (Vec<f64>, Vec<f64>) =
        acc.bias.iter().zip(&acc.bias_sq).map(|(&s, &sq)| mean_se(0.0, s, sq, acc.trials)).unzip();
    let bias_uncon = spec.prior.as_slice().iter().zip(spec.prior_unlabeled.as_slice()).map(|(p, pu)| p - pu).collect();
    let ordering = ordering_check(spec);
    Ok(EcsReport {
        k: spec.k(),
        n_labeled: spec.n_labeled,
        n_unlabeled: spec.n_unlabeled,
        prior: spec.prior.as_slice().to_vec(),
        prior_labeled: spec.prior_labeled.as_slice().to_vec(),
        prior_unlabeled: spec.prior_unlabeled.as_slice().to_vec(),
        ecs_uncon_closed: ecs_uncon_closed(spec)?,
        ecs_con_closed: ecs_con_closed(spec)?,
        ecs_uncon_empirical,
        ecs_uncon_se,
        ecs_con_empirical,
        ecs_con_se,
        bias_con,
        bias_con_se,
        bias_uncon,
        ordering_condition: ordering.holds,
        ordering,
        trials: acc.trials,
        seed,
    })
}

/// Sequential Monte Carlo over `trials` labeled draws.
pub fn monte_carlo_ecs(spec: &PopulationSpec, trials: u64, rng: &Rng) -> Result<EcsReport, TheoryError> {
    if trials == 0 {
        return Err(TheoryError::NoTrials);
    }
    let chunks = chunk_plan(trials)
        .iter()
        .enumerate()
        .map(|(c, &t)| monte_carlo_chunk(spec, rng, c, t))
        .collect::<Result<Vec<_>, _>>()?;
    let acc = reduce_chunks(&chunks).expect("at least one chunk");
    ecs_report(spec, &acc, rng.seed())
}

/// Mean and standard error of the chi-square statistic of counts drawn from
/// `Multinomial(n, probs)` against `n·probs`.
pub fn chi_square_null_mean(n: u64, probs: &ClassPrior, trials: u64, rng: &mut Rng) -> Result<(f64, f64), TheoryError> {
    if trials == 0 {
        return Err(TheoryError::NoTrials);
    }
    let expected: Vec<f64> = probs.as_slice().iter().map(|p| n as f64 * p).collect();
    let mut values = Vec::with_capacity(trials as usize);
    for _ in 0..trials {
        let counts = sample_multinomial(n, probs, rng);
        values.push(chi_square_counts(&counts, &expected)?);
    }
    let sum = pairwise_sum(&values);
    let sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    Ok(mean_se(0.0, sum, pairwise_sum(&sq), trials))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prior(v: &[f64]) -> ClassPrior {
        ClassPrior::new(v.to_vec()).unwrap()
    }

    fn shifted_spec() -> PopulationSpec {
        PopulationSpec::new(prior(&[0.5, 0.5]), prior(&[0.3, 0.7]), 20, 100).unwrap()
    }

    #[test]
    fn derived_prior_satisfies_identity() {
        let s = shifted_spec();
        assert!((s.prior().get(0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.prior().get(1) - 2.0 / 3.0).abs() < 1e-15);
        assert!(
            PopulationSpec::with_prior(&prior(&[0.5, 0.5]), prior(&[0.5, 0.5]), prior(&[0.3, 0.7]), 20, 100).is_err()
        );
    }

    #[test]
    fn multinomial_edge_cases() {
        let mut rng = Rng::new(1, 0);
        assert_eq!(sample_multinomial(0, &prior(&[0.2, 0.8]), &mut rng), [0, 0]);
        assert_eq!(sample_multinomial(7, &prior(&[1.0, 0.0, 0.0]), &mut rng), [7, 0, 0]);
        assert_eq!(sample_multinomial(7, &prior(&[0.0, 0.0, 1.0]), &mut rng), [0, 0, 7]);
        for _ in 0..100 {
            let c = sample_multinomial(50, &prior(&[0.1, 0.2, 0.3, 0.4]), &mut rng);
            assert_eq!(c.iter().sum::<u64>(), 50);
        }
    }

    #[test]
    fn chi_square_examples() {
        assert_eq!(chi_square_counts(&[50, 50], &[50.0, 50.0]).unwrap(), 0.0);
        assert_eq!(chi_square_counts(&[60, 40], &[50.0, 50.0]).unwrap(), 4.0);
        assert!(matches!(chi_square_counts(&[1, 1], &[0.0, 2.0]), Err(TheoryError::NonPositiveExpected(0, _))));
    }

    #[test]
    fn unconditional_estimator_examples() {
        let s = PopulationSpec::new(prior(&[0.5, 0.5]), prior(&[0.5, 0.5]), 0, 100).unwrap();
        let e = estimator_uncon(&s);
        assert_eq!(e.counts, [50.0, 50.0]);
        assert_eq!(e.distribution, [0.5, 0.5]);
        let s = PopulationSpec::new(prior(&[0.25; 4]), prior(&[0.25; 4]), 40, 200).unwrap();
        assert_eq!(estimator_uncon(&s).counts, [50.0; 4]);
    }

    #[test]
    fn conditional_estimator_examples() {
        let s = shifted_spec();
        let e = estimator_con(&s, &[12, 8]).unwrap();
        assert!((e.counts[0] - 28.0).abs() < 1e-12 && (e.counts[1] - 72.0).abs() < 1e-12);
        assert!((e.distribution[0] - 0.28).abs() < 1e-14 && (e.distribution[1] - 0.72).abs() < 1e-14);
        let e = estimator_con(&s, &[10, 10]).unwrap();
        assert!((e.distribution[0] - 0.3).abs() < 1e-14);
        assert_eq!(estimator_con(&s, &[10, 11]), Err(TheoryError::CountMismatch { expected: 20, got: 21 }));

        let s = PopulationSpec::new(prior(&[0.5, 0.5]), prior(&[0.3, 0.7]), 0, 100).unwrap();
        assert_eq!(estimator_con(&s, &[0, 0]).unwrap().distribution, s.prior().as_slice());
    }

    #[test]
    fn closed_form_examples() {
        let s = PopulationSpec::new(prior(&[0.5, 0.5]), prior(&[0.5, 0.5]), 20, 100).unwrap();
        assert_eq!(ecs_uncon_closed(&s).unwrap(), 0.0);
        assert!((ecs_con_closed(&s).unwrap() - 0.2).abs() < 1e-15);

        // prior (0.5, 0.5) against unlabeled (0.3, 0.7) with Nᵘ = 100
        let s = PopulationSpec::new(prior(&[0.5, 0.5]), prior(&[0.1, 0.9]), 100, 100).unwrap();
        assert_eq!(s.prior().as_slice(), [0.3, 0.7]);
        let t = PopulationSpec::new(prior(&[0.7, 0.3]), prior(&[0.3, 0.7]), 100, 100).unwrap();
        assert_eq!(t.prior().as_slice(), [0.5, 0.5]);
        assert!((ecs_uncon_closed(&t).unwrap() - 19.047_619_047_619_05).abs() < 1e-9);
        let t2 = PopulationSpec::new(prior(&[0.7, 0.3]), prior(&[0.3, 0.7]), 200, 200).unwrap();
        assert!((ecs_uncon_closed(&t2).unwrap() - 2.0 * ecs_uncon_closed(&t).unwrap()).abs() < 1e-9);

        let s = PopulationSpec::new(prior(&[0.5, 0.5]), prior(&[0.3, 0.7]), 0, 100).unwrap();
        assert_eq!(ecs_con_closed(&s).unwrap(), 0.0);
        let s = PopulationSpec::new(prior(&[1.0, 0.0]), prior(&[0.3, 0.7]), 30, 100).unwrap();
        assert_eq!(ecs_con_closed(&s).unwrap(), 0.0);
    }

    #[test]
    fn ordering_examples() {
        let s = PopulationSpec::new(prior(&[0.5, 0.5]), prior(&[0.3, 0.7]), 0, 1_000_000).unwrap();
        assert!(!ordering_condition(&s));

        // r = 1/6, rᵢ = 1/12; |1/12 − pᵘᵢ/6| = 1/30 and 1/30 (= 0.0333…),
        // √100·(1/30) = 1/3 < 1.
        let s = shifted_spec();
        let c = ordering_check(&s);
        assert!(!c.per_class_bound);
        assert!(c.variance_bound);
        assert!(!c.holds);
        // r·pⱼ ≥ (1/6)(1/3) = 1/18 so √100·max(·) ≥ 10/18 < 1 as well.
        assert!(!c.max_over_pairs);

        // Same shift with many unlabeled samples: 1/30 scaled by N/(N) stays
        // near 1/30·(120/(20+Nᵘ))… large Nˡ and Nᵘ together.
        let s = PopulationSpec::new(prior(&[0.5, 0.5]), prior(&[0.3, 0.7]), 20_000, 100_000).unwrap();
        assert!(ordering_condition(&s));
        assert!(ecs_con_closed(&s).unwrap() <= ecs_uncon_closed(&s).unwrap());
    }

    #[test]
    fn max_over_pairs_reading_is_not_sufficient() {
        // Matching priors: ECS_uncon = 0 while ECS_con = Nˡ/Nᵘ = 1. Every
        // deviation is zero, yet √Nᵘ·r·pⱼ = 10·0.5·0.5 > 1 satisfies the
        // pairwise-max form.
        let s = PopulationSpec::new(prior(&[0.5, 0.5]), prior(&[0.5, 0.5]), 100, 100).unwrap();
        let c = ordering_check(&s);
        assert!(c.max_over_pairs);
        assert!(!c.holds);
        assert!(ecs_con_closed(&s).unwrap() > ecs_uncon_closed(&s).unwrap());
    }

    #[test]
    fn matching_priors_give_zero_uncon_ecs() {
        let s = PopulationSpec::new(prior(&[0.25; 4]), prior(&[0.25; 4]), 40, 200).unwrap();
        let r = monte_carlo_ecs(&s, 1000, &Rng::new(3, 0)).unwrap();
        assert_eq!(r.ecs_uncon_empirical, 0.0);
        assert!(r.bias_uncon.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn chunk_plan_covers_trials() {
        assert_eq!(chunk_plan(1), [1]);
        assert_eq!(chunk_plan(CHUNK_TRIALS), [CHUNK_TRIALS]);
        assert_eq!(chunk_plan(2 * CHUNK_TRIALS + 5), [CHUNK_TRIALS, CHUNK_TRIALS, 5]);
    }

    #[test]
    fn zero_trials_rejected() {
        assert_eq!(monte_carlo_ecs(&shifted_spec(), 0, &Rng::new(0, 0)), Err(TheoryError::NoTrials));
    }
}
