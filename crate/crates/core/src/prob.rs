//! Validated probability containers and the seen/novel partition.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::math;

/// Column-sum tolerance applied to externally supplied matrices.
pub const EXTERNAL_TOL: f64 = 1e-6;
/// Sum tolerance for probability vectors.
pub const VECTOR_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbError {
    #[error("negative entry at row {0}, column {1}")]
    NegativeEntry(usize, usize),
    #[error("non-finite entry at row {0}, column {1}")]
    NonFiniteEntry(usize, usize),
    #[error("column {0} sums to {1}, expected 1")]
    ColumnNotNormalized(usize, f64),
    #[error("matrix must have at least one row and one column (got {k}x{n})")]
    EmptyMatrix { k: usize, n: usize },
    #[error("expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("probability vector is empty")]
    EmptyVector,
    #[error("probability entry {0} is negative or non-finite ({1})")]
    InvalidProbability(usize, f64),
    #[error("probability vector sums to {0}, expected 1")]
    VectorNotNormalized(f64),
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("class {class} is out of range for {k_total} classes")]
    ClassOutOfRange { class: usize, k_total: usize },
    #[error("class {0} is listed twice")]
    DuplicateClass(usize),
    #[error("class {0} is in neither the seen nor the novel set")]
    UncoveredClass(usize),
    #[error("partition needs at least one unlabeled sample")]
    NoUnlabeled,
    #[error("label {0} is not a seen class")]
    LabelNotSeen(usize),
}

/// A length-K probability vector: the class prior, or any class distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ClassPrior {
    probs: Vec<f64>,
}

impl ClassPrior {
    pub fn new(probs: Vec<f64>) -> Result<Self, ProbError> {
        if probs.is_empty() {
            return Err(ProbError::EmptyVector);
        }
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(ProbError::InvalidProbability(i, p));
            }
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > VECTOR_TOL {
            return Err(ProbError::VectorNotNormalized(sum));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: &[f64]) -> Result<Self, ProbError> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) || !sum.is_finite() {
            return Err(ProbError::VectorNotNormalized(sum));
        }
        Self::new(weights.iter().map(|w| w / sum).collect())
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0, "uniform prior needs k >= 1");
        Self { probs: vec![1.0 / k as f64; k] }
    }

    pub fn k(&self) -> usize {
        self.probs.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.probs
    }

    pub fn get(&self, i: usize) -> f64 {
        self.probs[i]
    }
}

impl TryFrom<Vec<f64>> for ClassPrior {
    type Error = ProbError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<ClassPrior> for Vec<f64> {
    fn from(p: ClassPrior) -> Self {
        p.probs
    }
}

/// Column-stochastic K×N matrix. Column `j` is the class distribution of
/// sample `j`; storage is column-major so each sample is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    k: usize,
    n: usize,
    data: Vec<f64>,
}

/// Validates a K×N matrix given in class-row (row-major) order.
pub fn validate_prob_matrix(k: usize, n: usize, rows: &[f64]) -> Result<ProbMatrix, ProbError> {
    ProbMatrix::from_rows(k, n, rows)
}

impl ProbMatrix {
    /// Builds from class-row order, validating every entry and column.
    pub fn from_rows(k: usize, n: usize, rows: &[f64]) -> Result<Self, ProbError> {
        if k == 0 || n == 0 {
            return Err(ProbError::EmptyMatrix { k, n });
        }
        if rows.len() != k * n {
            return Err(ProbError::ShapeMismatch { expected: k * n, got: rows.len() });
        }
        let mut data = vec![0.0; k * n];
        for i in 0..k {
            for j in 0..n {
                data[j * k + i] = rows[i * n + j];
            }
        }
        Self::from_col_major(k, n, data)
    }

    /// Builds from column-major storage, validating every entry and column.
    pub fn from_col_major(k: usize, n: usize, data: Vec<f64>) -> Result<Self, ProbError> {
        if k == 0 || n == 0 {
            return Err(ProbError::EmptyMatrix { k, n });
        }
        if data.len() != k * n {
            return Err(ProbError::ShapeMismatch { expected: k * n, got: data.len() });
        }
        for j in 0..n {
            for i in 0..k {
                let v = data[j * k + i];
                if !v.is_finite() {
                    return Err(ProbError::NonFiniteEntry(i, j));
                }
                if v < 0.0 {
                    return Err(ProbError::NegativeEntry(i, j));
                }
            }
        }
        for j in 0..n {
            let s: f64 = data[j * k..(j + 1) * k].iter().sum();
            if (s - 1.0).abs() > EXTERNAL_TOL {
                return Err(ProbError::ColumnNotNormalized(j, s));
            }
        }
        Ok(Self { k, n, data })
    }

    /// Builds from a list of columns.
    pub fn from_columns(k: usize, columns: &[Vec<f64>]) -> Result<Self, ProbError> {
        let mut data = Vec::with_capacity(k * columns.len());
        for c in columns {
            if c.len() != k {
                return Err(ProbError::ShapeMismatch { expected: k, got: c.len() });
            }
            data.extend_from_slice(c);
        }
        Self::from_col_major(k, columns.len(), data)
    }

    /// Internal constructor for matrices whose columns are normalized by
    /// construction. Checked in debug builds only.
    pub(crate) fn from_col_major_trusted(k: usize, n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), k * n);
        debug_assert!(data.chunks(k.max(1)).all(|c| (c.iter().sum::<f64>() - 1.0).abs() < 1e-9));
        Self { k, n, data }
    }

    /// `n` copies of the uniform distribution over `k` classes.
    pub fn uniform(k: usize, n: usize) -> Self {
        Self::from_col_major_trusted(k, n, vec![1.0 / k as f64; k * n])
    }

    /// One-hot columns for the given class indices.
    pub fn one_hot(k: usize, labels: &[usize]) -> Result<Self, ProbError> {
        let mut data = vec![0.0; k * labels.len()];
        for (j, &c) in labels.iter().enumerate() {
            if c >= k {
                return Err(ProbError::ClassOutOfRange { class: c, k_total: k });
            }
            data[j * k + c] = 1.0;
        }
        if labels.is_empty() {
            return Err(ProbError::EmptyMatrix { k, n: 0 });
        }
        Ok(Self::from_col_major_trusted(k, labels.len(), data))
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, class: usize, sample: usize) -> f64 {
        self.data[sample * self.k + class]
    }

    #[inline]
    pub fn column(&self, sample: usize) -> &[f64] {
        &self.data[sample * self.k..(sample + 1) * self.k]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.k)
    }

    /// Column-major storage.
    pub fn as_col_major(&self) -> &[f64] {
        &self.data
    }

    /// Entries in class-row order.
    pub fn to_rows(&self) -> Vec<f64> {
        let mut rows = vec![0.0; self.k * self.n];
        for j in 0..self.n {
            for i in 0..self.k {
                rows[i * self.n + j] = self.data[j * self.k + i];
            }
        }
        rows
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.k];
        for col in self.columns() {
            for (s, v) in sums.iter_mut().zip(col) {
                *s += v;
            }
        }
        sums
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.columns().map(|c| c.iter().sum()).collect()
    }

    /// Mean column, i.e. the average predicted class distribution.
    pub fn mean_column(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.row_sums().into_iter().map(|s| s / n).collect()
    }

    /// A new matrix made of the selected columns, in the given order.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.k);
        for &j in idx {
            data.extend_from_slice(self.column(j));
        }
        Self { k: self.k, n: idx.len(), data }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, ProbError> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(ProbError::NonFiniteInput);
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub(crate) fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(logits) {
        *o = math::exp(x - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Seen/novel split of the class set with labeled and unlabeled sample counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct PartitionSpec {
    k_total: usize,
    seen: Vec<usize>,
    novel: Vec<usize>,
    n_labeled: usize,
    n_unlabeled: usize,
    is_seen: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    k_total: usize,
    seen: Vec<usize>,
    novel: Vec<usize>,
    n_labeled: usize,
    n_unlabeled: usize,
}

impl TryFrom<PartitionRepr> for PartitionSpec {
    type Error = ProbError;

    fn try_from(r: PartitionRepr) -> Result<Self, Self::Error> {
        PartitionSpec::new(r.k_total, r.seen, r.novel, r.n_labeled, r.n_unlabeled)
    }
}

impl From<PartitionSpec> for PartitionRepr {
    fn from(p: PartitionSpec) -> Self {
        Self { k_total: p.k_total, seen: p.seen, novel: p.novel, n_labeled: p.n_labeled, n_unlabeled: p.n_unlabeled }
    }
}

impl PartitionSpec {
    pub fn new(
        k_total: usize,
        seen: Vec<usize>,
        novel: Vec<usize>,
        n_labeled: usize,
        n_unlabeled: usize,
    ) -> Result<Self, ProbError> {
        let mut tag: Vec<Option<bool>> = vec![None; k_total];
        for (&c, s) in seen.iter().map(|c| (c, true)).chain(novel.iter().map(|c| (c, false))) {
            if c >= k_total {
                return Err(ProbError::ClassOutOfRange { class: c, k_total });
            }
            if tag[c].is_some() {
                return Err(ProbError::DuplicateClass(c));
            }
            tag[c] = Some(s);
        }
        if let Some(c) = tag.iter().position(Option::is_none) {
            return Err(ProbError::UncoveredClass(c));
        }
        if n_unlabeled == 0 {
            return Err(ProbError::NoUnlabeled);
        }
        let is_seen = tag.into_iter().map(|t| t == Some(true)).collect();
        Ok(Self { k_total, seen, novel, n_labeled, n_unlabeled, is_seen })
    }

    /// Seen classes are `seen`; every other class is novel.
    pub fn from_seen(
        k_total: usize,
        seen: Vec<usize>,
        n_labeled: usize,
        n_unlabeled: usize,
    ) -> Result<Self, ProbError> {
        let mut mark = vec![false; k_total];
        for &c in &seen {
            if c < k_total {
                mark[c] = true;
            }
        }
        let novel = (0..k_total).filter(|&c| !mark[c]).collect();
        Self::new(k_total, seen, novel, n_labeled, n_unlabeled)
    }

    pub fn k_total(&self) -> usize {
        self.k_total
    }

    pub fn seen(&self) -> &[usize] {
        &self.seen
    }

    pub fn novel(&self) -> &[usize] {
        &self.novel
    }

    pub fn n_labeled(&self) -> usize {
        self.n_labeled
    }

    pub fn n_unlabeled(&self) -> usize {
        self.n_unlabeled
    }

    pub fn n_total(&self) -> usize {
        self.n_labeled + self.n_unlabeled
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.is_seen[class]
    }

    /// Classes sharing a group with `class`.
    pub fn group_of(&self, class: usize) -> &[usize] {
        if self.is_seen(class) {
            &self.seen
        } else {
            &self.novel
        }
    }
}

/// Ground-truth labels of the labeled samples, all drawn from seen classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledBlock {
    labels: Vec<usize>,
}

impl LabeledBlock {
    pub fn new(labels: Vec<usize>, partition: &PartitionSpec) -> Result<Self, ProbError> {
        for &c in &labels {
            if c >= partition.k_total() {
                return Err(ProbError::ClassOutOfRange { class: c, k_total: partition.k_total() });
            }
            if !partition.is_seen(c) {
                return Err(ProbError::LabelNotSeen(c));
            }
        }
        Ok(Self { labels })
    }

    pub fn empty() -> Self {
        Self { labels: Vec::new() }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-class label counts over `k` classes. Labels `>= k` are ignored.
    pub fn counts(&self, k: usize) -> Vec<u64> {
        let mut counts = vec![0u64; k];
        for &c in &self.labels {
            if c < k {
                counts[c] += 1;
            }
        }
        counts
    }
}
