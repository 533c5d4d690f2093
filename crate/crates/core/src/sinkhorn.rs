//! Self-label assignment by entropy-regularized optimal transport.
//!
//! Given predictions `P` (K×N, column-stochastic) and a class prior, the
//! assignment `Q` minimizes `⟨Q, −log P⟩ − ε·H(Q)` over the transportation
//! polytope with row sums `N·prior` and unit column sums. The optimum has the
//! form `Q = diag(u)·P^(1/ε)·diag(v)`; we iterate the dual potentials
//! `f = log u`, `g = log v` with log-sum-exp reductions so small `ε` does not
//! underflow.
//!
//! The conditional variant pins the first `Nˡ` columns to their one-hot
//! labels and solves the remaining K×Nᵘ block against the residual row
//! marginals.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math::{self, log_sum_exp};
use crate::prob::{ClassPrior, LabeledBlock, ProbMatrix};

/// Smallest admissible row mass `N·pᵢ` in a prior handed to the solver.
pub const PRIOR_MASS_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SinkhornError {
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("tolerance not reached after {iters} iterations (marginal error {err:e})")]
    NoConvergence { iters: usize, err: f64 },
    #[error("prior mass N*p[{class}] = {mass:e} is below the floor")]
    DegeneratePrior { class: usize, mass: f64 },
    #[error("all residual row marginals are zero but {n_unlabeled} unlabeled samples remain")]
    InfeasibleResidual { n_unlabeled: usize },
    #[error("label {label} is outside the {k} model classes")]
    LabelOutOfSeenSet { label: usize, k: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    /// Weight of the entropy term; the kernel is `P^(1/ε)`.
    pub epsilon: f64,
    pub max_iters: usize,
    /// L1 row-marginal tolerance for early stopping; 0 runs exactly
    /// `max_iters` iterations.
    pub tol: f64,
}

impl SinkhornConfig {
    pub fn new(epsilon: f64, max_iters: usize, tol: f64) -> Result<Self, SinkhornError> {
        let cfg = Self { epsilon, max_iters, tol };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration given the kernel exponent `1/ε` instead of `ε`.
    pub fn from_inverse_temperature(
        inverse_temperature: f64,
        max_iters: usize,
        tol: f64,
    ) -> Result<Self, SinkhornError> {
        if !(inverse_temperature > 0.0) || !inverse_temperature.is_finite() {
            return Err(SinkhornError::InvalidConfig("inverse temperature must be positive"));
        }
        Self::new(1.0 / inverse_temperature, max_iters, tol)
    }

    /// Fixed 10-iteration budget with kernel exponent 10 (ε = 0.1).
    pub fn training() -> Self {
        Self { epsilon: 0.1, max_iters: 10, tol: 0.0 }
    }

    /// Same 10-iteration budget with the published value 10 taken as `ε`
    /// itself rather than as the kernel exponent.
    pub fn literal() -> Self {
        Self { epsilon: 10.0, max_iters: 10, tol: 0.0 }
    }

    /// Run to a 1e-9 marginal tolerance, up to 10⁵ iterations.
    pub fn verification(epsilon: f64) -> Self {
        Self { epsilon, max_iters: 100_000, tol: 1e-9 }
    }

    pub fn validate(&self) -> Result<(), SinkhornError> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(SinkhornError::InvalidConfig("epsilon must be positive and finite"));
        }
        if self.max_iters == 0 {
            return Err(SinkhornError::InvalidConfig("max_iters must be at least 1"));
        }
        if !(self.tol >= 0.0) {
            return Err(SinkhornError::InvalidConfig("tol must be non-negative"));
        }
        Ok(())
    }
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self::training()
    }
}

/// A solved self-label assignment with its feasibility diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub q: ProbMatrix,
    /// L1 deviation of the row sums from the row targets actually imposed.
    pub row_marginal_err: f64,
    /// L1 deviation of the column sums from 1.
    pub col_marginal_err: f64,
    pub iters_used: usize,
    /// Tolerance reached, or the fixed iteration budget completed when `tol == 0`.
    pub converged: bool,
    /// Some residual `N·pᵢ − nᵢˡ` was negative and had to be clamped.
    pub residual_clamped: bool,
    /// Row targets imposed on `q` (`N·prior`, or labeled counts plus residual).
    pub row_targets: Vec<f64>,
}

impl Assignment {
    /// Surfaces a missed tolerance as [`SinkhornError::NoConvergence`].
    pub fn check_convergence(&self) -> Result<(), SinkhornError> {
        if self.converged {
            Ok(())
        } else {
            Err(SinkhornError::NoConvergence { iters: self.iters_used, err: self.row_marginal_err })
        }
    }

    /// Column-mean of `q`: the class distribution implied by the assignment.
    pub fn class_distribution(&self) -> Vec<f64> {
        self.q.mean_column()
    }
}

/// Output of the inner transport solve.
struct Transport {
    q: Vec<f64>,
    iters: usize,
    converged: bool,
}

/// Log-domain Sinkhorn on a column-major K×N block with unit column targets.
fn solve_transport(p: &[f64], k: usize, n: usize, row_targets: &[f64], cfg: &SinkhornConfig) -> Transport {
    let inv_eps = 1.0 / cfg.epsilon;
    let log_kernel: Vec<f64> = p.iter().map(|&v| math::floored_ln(v) * inv_eps).collect();
    let log_a: Vec<f64> = row_targets.iter().map(|&a| if a > 0.0 { math::ln(a) } else { f64::NEG_INFINITY }).collect();

    let mut f = vec![0.0; k];
    let mut g = vec![0.0; n];
    let mut row_lse = vec![0.0; k];
    let mut row_max = vec![f64::NEG_INFINITY; k];
    let mut row_acc = vec![0.0; k];
    let mut iters = 0;
    let mut converged = cfg.tol == 0.0;

    loop {
        // Row reductions L_i = LSE_j(logK_ij + g_j), column-major friendly.
        row_max.iter_mut().for_each(|m| *m = f64::NEG_INFINITY);
        for j in 0..n {
            let col = &log_kernel[j * k..(j + 1) * k];
            for i in 0..k {
                let v = col[i] + g[j];
                if v > row_max[i] {
                    row_max[i] = v;
                }
            }
        }
        row_acc.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            let col = &log_kernel[j * k..(j + 1) * k];
            for i in 0..k {
                row_acc[i] += math::exp(col[i] + g[j] - row_max[i]);
            }
        }
        for i in 0..k {
            row_lse[i] = row_max[i] + math::ln(row_acc[i]);
        }

        // Row sums of the current iterate are exp(f_i + L_i).
        if iters > 0 && cfg.tol > 0.0 {
            let err: f64 = (0..k)
                .map(|i| {
                    let s = if log_a[i] == f64::NEG_INFINITY { 0.0 } else { math::exp(f[i] + row_lse[i]) };
                    (s - row_targets[i]).abs()
                })
                .sum();
            if err <= cfg.tol {
                converged = true;
                break;
            }
        }
        if iters == cfg.max_iters {
            break;
        }

        for i in 0..k {
            f[i] = log_a[i] - row_lse[i];
        }
        for j in 0..n {
            let col = &log_kernel[j * k..(j + 1) * k];
            g[j] = -log_sum_exp(col.iter().zip(&f).map(|(lk, fi)| lk + fi));
        }
        iters += 1;
    }

    let mut q = vec![0.0; k * n];
    for j in 0..n {
        for i in 0..k {
            q[j * k + i] = math::exp(f[i] + log_kernel[j * k + i] + g[j]);
        }
    }
    Transport { q, iters, converged }
}

fn check_prior(p: &ProbMatrix, prior: &ClassPrior) -> Result<Vec<f64>, SinkhornError> {
    if prior.k() != p.k() {
        return Err(SinkhornError::ShapeMismatch("prior length differs from class count"));
    }
    let n = p.n() as f64;
    let targets: Vec<f64> = prior.as_slice().iter().map(|&pi| n * pi).collect();
    if let Some((class, &mass)) = targets.iter().enumerate().find(|(_, &m)| m < PRIOR_MASS_FLOOR) {
        return Err(SinkhornError::DegeneratePrior { class, mass });
    }
    Ok(targets)
}

/// Self-labels over the polytope `{Q ≥ 0 : Q·1 = N·prior, Qᵀ·1 = 1}`.
pub fn solve_unconditional(
    p: &ProbMatrix,
    prior: &ClassPrior,
    cfg: &SinkhornConfig,
) -> Result<Assignment, SinkhornError> {
    cfg.validate()?;
    let targets = check_prior(p, prior)?;
    let t = solve_transport(p.as_col_major(), p.k(), p.n(), &targets, cfg);
    let q = ProbMatrix::from_col_major_trusted(p.k(), p.n(), t.q);
    let (row_err, col_err) = marginal_error(&q, &targets, &vec![1.0; p.n()])?;
    Ok(Assignment {
        q,
        row_marginal_err: row_err,
        col_marginal_err: col_err,
        iters_used: t.iters,
        converged: t.converged,
        residual_clamped: false,
        row_targets: targets,
    })
}

/// Row marginals left for the unlabeled block once the labeled columns are
/// fixed: `max(N·pᵢ − nᵢˡ, 0)`, rescaled to sum to `Nᵘ = n_total − Nˡ`.
pub fn residual_row_marginals(
    prior: &ClassPrior,
    labeled_counts: &[u64],
    n_total: usize,
) -> Result<Vec<f64>, SinkhornError> {
    if labeled_counts.len() != prior.k() {
        return Err(SinkhornError::ShapeMismatch("labeled counts differ from class count"));
    }
    let n_labeled: u64 = labeled_counts.iter().sum();
    if n_labeled as usize > n_total {
        return Err(SinkhornError::ShapeMismatch("more labeled samples than samples"));
    }
    let n_unlabeled = n_total - n_labeled as usize;
    let n = n_total as f64;
    let raw: Vec<f64> =
        prior.as_slice().iter().zip(labeled_counts).map(|(&p, &c)| (n * p - c as f64).max(0.0)).collect();
    if n_unlabeled == 0 {
        return Ok(vec![0.0; prior.k()]);
    }
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(SinkhornError::InfeasibleResidual { n_unlabeled });
    }
    let scale = n_unlabeled as f64 / total;
    Ok(raw.into_iter().map(|r| r * scale).collect())
}

/// Self-labels with the first `labeled.len()` columns pinned to their
/// one-hot labels. With no labels this is exactly [`solve_unconditional`].
pub fn solve_conditional(
    p: &ProbMatrix,
    prior: &ClassPrior,
    labeled: &LabeledBlock,
    cfg: &SinkhornConfig,
) -> Result<Assignment, SinkhornError> {
    cfg.validate()?;
    let (k, n) = (p.k(), p.n());
    let n_labeled = labeled.len();
    if n_labeled > n {
        return Err(SinkhornError::ShapeMismatch("more labels than columns"));
    }
    if let Some(&label) = labeled.labels().iter().find(|&&c| c >= k) {
        return Err(SinkhornError::LabelOutOfSeenSet { label, k });
    }
    if n_labeled == 0 {
        return solve_unconditional(p, prior, cfg);
    }
    check_prior(p, prior)?;
    let counts = labeled.counts(k);
    let residual = residual_row_marginals(prior, &counts, n)?;
    let nf = n as f64;
    let residual_clamped = prior.as_slice().iter().zip(&counts).any(|(&pi, &c)| nf * pi - (c as f64) < 0.0);

    let mut data = vec![0.0; k * n];
    for (j, &c) in labeled.labels().iter().enumerate() {
        data[j * k + c] = 1.0;
    }
    let mut iters = 0;
    let mut converged = true;
    if n_labeled < n {
        let block = &p.as_col_major()[n_labeled * k..];
        let t = solve_transport(block, k, n - n_labeled, &residual, cfg);
        data[n_labeled * k..].copy_from_slice(&t.q);
        iters = t.iters;
        converged = t.converged;
    }
    let q = ProbMatrix::from_col_major_trusted(k, n, data);
    let targets: Vec<f64> = counts.iter().zip(&residual).map(|(&c, r)| c as f64 + r).collect();
    let (row_err, col_err) = marginal_error(&q, &targets, &vec![1.0; n])?;
    Ok(Assignment {
        q,
        row_marginal_err: row_err,
        col_marginal_err: col_err,
        iters_used: iters,
        converged,
        residual_clamped,
        row_targets: targets,
    })
}

/// L1 norms of `row sums − target_rows` and `column sums − target_cols`.
pub fn marginal_error(q: &ProbMatrix, target_rows: &[f64], target_cols: &[f64]) -> Result<(f64, f64), SinkhornError> {
    if target_rows.len() != q.k() || target_cols.len() != q.n() {
        return Err(SinkhornError::ShapeMismatch("marginal targets do not match matrix shape"));
    }
    let row_err = q.row_sums().iter().zip(target_rows).map(|(s, t)| (s - t).abs()).sum();
    let col_err = q.col_sums().iter().zip(target_cols).map(|(s, t)| (s - t).abs()).sum();
    Ok((row_err, col_err))
}

/// Transport cost `Σᵢⱼ Qᵢⱼ·(−log Pᵢⱼ)` with the usual log floor.
pub fn transport_cost(q: &ProbMatrix, p: &ProbMatrix) -> f64 {
    q.as_col_major().iter().zip(p.as_col_major()).map(|(&qv, &pv)| -qv * math::floored_ln(pv)).sum()
}

/// Entropic objective `⟨Q, −log P⟩ + ε·Σ Q log Q`.
pub fn entropic_objective(q: &ProbMatrix, p: &ProbMatrix, epsilon: f64) -> f64 {
    let neg_entropy: f64 = q.as_col_major().iter().filter(|&&v| v > 0.0).map(|&v| v * math::ln(v)).sum();
    transport_cost(q, p) + epsilon * neg_entropy
}
