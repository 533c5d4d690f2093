//! Synthetic open-world runs: Gaussian-mixture data, noisy views, a
//! linear-softmax model and the full training loop.
//!
//! The model is `softmax(Wx + b)` on raw features. Each step pushes weak-view
//! predictions into a FIFO queue, solves the self-label assignment on the
//! whole queue, and trains on the current batch with
//! `ℒ = ℒ_sup + ℒ_cls + ℒ_conf` using analytic logit gradients.

use alloc::collections::VecDeque;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{self, EvalError};
use crate::features::Features;
use crate::math;
use crate::objectives::{self, LossBreakdown, LossError, LossWeights};
use crate::prob::{ClassPrior, LabeledBlock, PartitionSpec, ProbError, ProbMatrix};
use crate::rng::Rng;
use crate::sinkhorn::{self, SinkhornConfig, SinkhornError};
use crate::threshold::{self, PseudoBatch, ThresholdError, ThresholdState};

pub const DEFAULT_QUEUE_CAPACITY: usize = 1024;
/// Fraction of coordinates zeroed in a local view.
pub const LOCAL_MASK_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("{k} centroids at separation {separation} need dimension >= {needed}, got {d}")]
    InfeasibleSeparation { k: usize, d: usize, separation: f64, needed: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("epoch {epoch} is outside 1..={epochs}")]
    EpochOutOfRange { epoch: usize, epochs: usize },
    #[error("expected {expected} classes, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Sinkhorn(#[from] SinkhornError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

fn invalid(msg: &str) -> HarnessError {
    HarnessError::InvalidConfig(String::from(msg))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub k_total: usize,
    pub feature_dim: usize,
    /// Size of the largest class.
    pub samples_per_class: usize,
    /// Largest over smallest class size, interpolated geometrically.
    pub imbalance_factor: f64,
    pub novel_ratio: f64,
    pub label_ratio: f64,
    /// Distance between centroids in units of the within-class σ (= 1).
    pub cluster_separation: f64,
    pub weak_noise_sigma: f64,
    pub strong_noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            k_total: 10,
            feature_dim: 16,
            samples_per_class: 100,
            imbalance_factor: 1.0,
            novel_ratio: 0.5,
            label_ratio: 0.5,
            cluster_separation: 8.0,
            weak_noise_sigma: 0.3,
            strong_noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.k_total < 2 {
            return Err(invalid("k_total must be at least 2"));
        }
        if self.feature_dim == 0 || self.samples_per_class == 0 {
            return Err(invalid("feature_dim and samples_per_class must be positive"));
        }
        if !(self.imbalance_factor >= 1.0 && self.imbalance_factor.is_finite()) {
            return Err(invalid("imbalance_factor must be finite and >= 1"));
        }
        if !(self.novel_ratio > 0.0 && self.novel_ratio < 1.0) {
            return Err(invalid("novel_ratio must lie in (0, 1)"));
        }
        if !(self.label_ratio > 0.0 && self.label_ratio <= 1.0) {
            return Err(invalid("label_ratio must lie in (0, 1]"));
        }
        if !(self.cluster_separation > 0.0 && self.cluster_separation.is_finite()) {
            return Err(invalid("cluster_separation must be positive"));
        }
        if !(self.weak_noise_sigma >= 0.0 && self.strong_noise_sigma >= self.weak_noise_sigma)
            || !self.strong_noise_sigma.is_finite()
        {
            return Err(invalid("need 0 <= weak_noise_sigma <= strong_noise_sigma"));
        }
        if 2 * self.feature_dim < self.k_total {
            return Err(HarnessError::InfeasibleSeparation {
                k: self.k_total,
                d: self.feature_dim,
                separation: self.cluster_separation,
                needed: self.k_total.div_ceil(2),
            });
        }
        Ok(())
    }

    pub fn n_seen(&self) -> usize {
        math::ceil((1.0 - self.novel_ratio) * self.k_total as f64 - 1e-9) as usize
    }
}

/// `round(base · IF^(−c/(K−1)))` for class `c`.
pub fn class_counts(k: usize, base: usize, imbalance_factor: f64) -> Vec<usize> {
    if k == 1 {
        return vec![base];
    }
    (0..k)
        .map(|c| {
            let scale = math::powf(imbalance_factor, -(c as f64) / (k - 1) as f64);
            (math::round(base as f64 * scale) as usize).max(1)
        })
        .collect()
}

/// Centroids `±(s/√2)·e_j`: pairwise distances are `s` (or `s·√2` for
/// antipodal pairs). Needs `2·d ≥ k`.
pub fn centroids(k: usize, d: usize, separation: f64) -> Result<Vec<Vec<f64>>, HarnessError> {
    let needed = k.div_ceil(2);
    if 2 * d < k {
        return Err(HarnessError::InfeasibleSeparation { k, d, separation, needed });
    }
    let r = separation / math::sqrt(2.0);
    Ok((0..k)
        .map(|c| {
            let mut mu = vec![0.0; d];
            if c < d {
                mu[c] = r;
            } else {
                mu[c - d] = -r;
            }
            mu
        })
        .collect())
}

/// Labeled samples come first (indices `0..labeled.len()`), then the
/// unlabeled pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Features,
    pub truth: Vec<usize>,
    pub partition: PartitionSpec,
    pub labeled: LabeledBlock,
    pub weak_sigma: f64,
    pub strong_sigma: f64,
}

impl Dataset {
    pub fn k(&self) -> usize {
        self.partition.k_total()
    }

    pub fn m(&self) -> usize {
        self.truth.len()
    }

    pub fn n_labeled(&self) -> usize {
        self.labeled.len()
    }

    /// Class frequencies over every sample.
    pub fn truth_distribution(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.k()];
        for &t in &self.truth {
            d[t] += 1.0;
        }
        let m = self.m() as f64;
        d.iter_mut().for_each(|x| *x /= m);
        d
    }
}

pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<Dataset, HarnessError> {
    cfg.validate()?;
    let (k, d) = (cfg.k_total, cfg.feature_dim);
    let mu = centroids(k, d, cfg.cluster_separation)?;
    let counts = class_counts(k, cfg.samples_per_class, cfg.imbalance_factor);
    let n_seen = cfg.n_seen();
    let mut rng = Rng::new(cfg.seed, 0);

    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (c, &n_c) in counts.iter().enumerate() {
        let n_lab = if c < n_seen { (math::round(cfg.label_ratio * n_c as f64) as usize).min(n_c) } else { 0 };
        for i in 0..n_c {
            let x: Vec<f64> = mu[c].iter().map(|m| m + rng.normal()).collect();
            if i < n_lab {
                labeled.push((x, c));
            } else {
                unlabeled.push((x, c));
            }
        }
    }
    rng.shuffle(&mut labeled);
    rng.shuffle(&mut unlabeled);

    let (nl, nu) = (labeled.len(), unlabeled.len());
    let partition = PartitionSpec::from_seen(k, (0..n_seen).collect(), nl, nu)?;
    let mut data = Vec::with_capacity((nl + nu) * d);
    let mut truth = Vec::with_capacity(nl + nu);
    for (x, c) in labeled.iter().chain(&unlabeled) {
        data.extend_from_slice(x);
        truth.push(*c);
    }
    let labeled = LabeledBlock::new(truth[..nl].to_vec(), &partition)?;
    Ok(Dataset {
        features: Features::new(nl + nu, d, data)?,
        truth,
        partition,
        labeled,
        weak_sigma: cfg.weak_noise_sigma,
        strong_sigma: cfg.strong_noise_sigma,
    })
}

/// `x + N(0, σ²)` per coordinate.
pub fn noisy_view(x: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return x.to_vec();
    }
    x.iter().map(|v| v + sigma * rng.normal()).collect()
}

pub fn weak_view(x: &[f64], data: &Dataset, rng: &mut Rng) -> Vec<f64> {
    noisy_view(x, data.weak_sigma, rng)
}

pub fn strong_view(x: &[f64], data: &Dataset, rng: &mut Rng) -> Vec<f64> {
    noisy_view(x, data.strong_sigma, rng)
}

/// Strong noise with a random half of the coordinates zeroed.
pub fn local_view(x: &[f64], data: &Dataset, rng: &mut Rng) -> Vec<f64> {
    let mut v = strong_view(x, data, rng);
    let mut idx: Vec<usize> = (0..v.len()).collect();
    rng.shuffle(&mut idx);
    let masked = math::floor(LOCAL_MASK_FRACTION * v.len() as f64) as usize;
    for &j in &idx[..masked] {
        v[j] = 0.0;
    }
    v
}

/// `softmax(Wx + b)` with `W` stored row-major, one row per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    pub k: usize,
    pub d: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ToyModel {
    pub fn zeros(k: usize, d: usize) -> Self {
        Self { k, d, weights: vec![0.0; k * d], bias: vec![0.0; k] }
    }

    /// Weights drawn from `N(0, 0.01²)`, zero bias.
    pub fn init(k: usize, d: usize, rng: &mut Rng) -> Self {
        let mut m = Self::zeros(k, d);
        m.weights.iter_mut().for_each(|w| *w = 0.01 * rng.normal());
        m
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.k)
            .map(|c| {
                let row = &self.weights[c * self.d..(c + 1) * self.d];
                self.bias[c] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        crate::prob::softmax_unchecked(&self.logits(x))
    }

    pub fn predict_all(&self, x: &Features) -> ProbMatrix {
        let mut data = Vec::with_capacity(self.k * x.m());
        for row in x.rows() {
            data.extend(self.predict(row));
        }
        ProbMatrix::from_col_major_trusted(self.k, x.m(), data)
    }

    /// Accumulates `scale · g xᵀ` into `(gw, gb)`.
    fn accumulate(&self, gw: &mut [f64], gb: &mut [f64], g: &[f64], x: &[f64], scale: f64) {
        for c in 0..self.k {
            let s = scale * g[c];
            if s == 0.0 {
                continue;
            }
            gb[c] += s;
            for (w, v) in gw[c * self.d..(c + 1) * self.d].iter_mut().zip(x) {
                *w += s * v;
            }
        }
    }
}

/// FIFO buffer of prediction columns tagged with their label, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitQueue {
    capacity: usize,
    entries: VecDeque<(Vec<f64>, Option<usize>)>,
}

impl LogitQueue {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: VecDeque::with_capacity(capacity) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, column: Vec<f64>, label: Option<usize>) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((column, label));
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Vec<f64>, Option<usize>)> {
        self.entries.iter()
    }

    /// Self-labels for every queued column, in queue order. Conditional
    /// solves move labeled columns to the front and pin them.
    pub fn self_labels(
        &self,
        k: usize,
        prior: &ClassPrior,
        partition: &PartitionSpec,
        conditional: bool,
        cfg: &SinkhornConfig,
    ) -> Result<ProbMatrix, HarnessError> {
        let n = self.len();
        let mut order: Vec<usize> = (0..n).collect();
        if conditional {
            order.sort_by_key(|&i| self.entries[i].1.is_none());
        }
        let mut data = Vec::with_capacity(k * n);
        for &i in &order {
            data.extend_from_slice(&self.entries[i].0);
        }
        let p = ProbMatrix::from_col_major_trusted(k, n, data);
        let labels: Vec<usize> =
            if conditional { self.entries.iter().filter_map(|e| e.1).collect() } else { Vec::new() };
        let q = if labels.len() == n {
            ProbMatrix::one_hot(k, &labels)?
        } else {
            let block = LabeledBlock::new(labels, partition)?;
            sinkhorn::solve_conditional(&p, prior, &block, cfg)?.q
        };
        let mut out = vec![0.0; k * n];
        for (pos, &i) in order.iter().enumerate() {
            out[i * k..(i + 1) * k].copy_from_slice(q.column(pos));
        }
        Ok(ProbMatrix::from_col_major_trusted(k, n, out))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorMode {
    /// True class frequencies of the dataset.
    Known,
    Uniform,
    /// Starts uniform; re-estimated from predictions after every epoch.
    Adaptive {
        momentum: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThresholdPolicy {
    /// Separate seen and novel learning status.
    Hierarchical,
    Static {
        tau: f64,
    },
    /// One global status for all classes.
    SelfAdaptive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub sinkhorn: SinkhornConfig,
    pub threshold: ThresholdPolicy,
    pub threshold_momentum: f64,
    /// Local views per sample; 0 disables the multi-view clustering loss.
    pub multiview: usize,
    pub prior: PriorMode,
    pub conditional: bool,
    pub confidence_loss: bool,
    pub queue_capacity: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 64,
            learning_rate: 0.2,
            sinkhorn: SinkhornConfig::training(),
            threshold: ThresholdPolicy::Hierarchical,
            threshold_momentum: 0.99,
            multiview: 4,
            prior: PriorMode::Known,
            conditional: true,
            confidence_loss: true,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, k: usize) -> Result<(), HarnessError> {
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate must be positive"));
        }
        if self.queue_capacity <= k || self.queue_capacity < self.batch_size {
            return Err(invalid("queue_capacity must exceed k and hold a full batch"));
        }
        if !(0.0..=1.0).contains(&self.threshold_momentum) {
            return Err(invalid("threshold_momentum must lie in [0, 1]"));
        }
        if let PriorMode::Adaptive { momentum } = self.prior {
            if !(0.0..1.0).contains(&momentum) {
                return Err(invalid("adaptive prior momentum must lie in [0, 1)"));
            }
        }
        if let ThresholdPolicy::Static { tau } = self.threshold {
            if !(0.0..=1.0).contains(&tau) {
                return Err(invalid("static threshold must lie in [0, 1]"));
            }
        }
        self.sinkhorn.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub seen_acc: Option<f64>,
    pub novel_acc: Option<f64>,
    pub all_acc: f64,
    pub b_m: f64,
    pub b_s: f64,
    pub bias_gap: f64,
    pub retained_fraction: f64,
    /// Prior used by the solves during this epoch.
    pub prior: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// `momentum·current + (1 − momentum)·mean(preds)`, renormalized.
pub fn estimate_prior_adaptive(
    current: &ClassPrior,
    preds: &ProbMatrix,
    momentum: f64,
) -> Result<ClassPrior, HarnessError> {
    if preds.k() != current.k() {
        return Err(HarnessError::ShapeMismatch { expected: current.k(), got: preds.k() });
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(invalid("adaptive prior momentum must lie in [0, 1)"));
    }
    let mean = preds.mean_column();
    let mixed: Vec<f64> =
        current.as_slice().iter().zip(&mean).map(|(c, m)| momentum * c + (1.0 - momentum) * m).collect();
    Ok(ClassPrior::from_weights(&mixed)?)
}

fn initial_prior(data: &Dataset, mode: PriorMode) -> Result<ClassPrior, HarnessError> {
    Ok(match mode {
        PriorMode::Known => ClassPrior::new(data.truth_distribution())?,
        PriorMode::Uniform | PriorMode::Adaptive { .. } => ClassPrior::uniform(data.k()),
    })
}

/// Manhattan distance between the column mean of a full-dataset assignment
/// and the true class distribution.
pub fn self_label_bias(
    data: &Dataset,
    preds: &ProbMatrix,
    prior: &ClassPrior,
    conditional: bool,
    cfg: &SinkhornConfig,
) -> Result<f64, HarnessError> {
    let labels = if conditional { data.labeled.clone() } else { LabeledBlock::empty() };
    let q = if labels.len() == preds.n() {
        ProbMatrix::one_hot(data.k(), labels.labels())?
    } else {
        sinkhorn::solve_conditional(preds, prior, &labels, cfg)?.q
    };
    Ok(eval::manhattan_bias(&q.mean_column(), &data.truth_distribution())?)
}

/// Manhattan distance between the argmax class histogram and the truth.
pub fn prediction_bias(data: &Dataset, preds: &ProbMatrix) -> Result<f64, HarnessError> {
    let mut hist = vec![0.0; data.k()];
    for col in preds.columns() {
        hist[math::argmax(col)] += 1.0;
    }
    let m = preds.n() as f64;
    hist.iter_mut().for_each(|h| *h /= m);
    Ok(eval::manhattan_bias(&hist, &data.truth_distribution())?)
}

fn threshold_state(data: &Dataset, cfg: &TrainConfig) -> Result<Option<ThresholdState>, HarnessError> {
    let k = data.k();
    let partition = match cfg.threshold {
        ThresholdPolicy::Static { .. } => return Ok(None),
        ThresholdPolicy::Hierarchical => data.partition.clone(),
        ThresholdPolicy::SelfAdaptive => PartitionSpec::from_seen(k, (0..k).collect(), 1, 1)?,
    };
    Ok(Some(ThresholdState::new(partition, cfg.threshold_momentum)?))
}

struct Sample {
    weak: Vec<f64>,
    strong: Vec<f64>,
    locals: Vec<Vec<f64>>,
    p_weak: Vec<f64>,
    label: Option<usize>,
}

/// Trains a fresh model. Deterministic in `(data, cfg)`.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<(ToyModel, RunLog), HarnessError> {
    let (k, d, m) = (data.k(), data.features.d(), data.m());
    cfg.validate(k)?;
    let mut rng = Rng::new(cfg.seed, 1);
    let mut model = ToyModel::init(k, d, &mut rng);
    let mut log = RunLog::default();
    let mut queue = LogitQueue::new(cfg.queue_capacity);
    let mut thresholds = threshold_state(data, cfg)?;
    let mut prior = initial_prior(data, cfg.prior)?;
    let nl = data.n_labeled();
    let batches_per_epoch = m.div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as f64;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..m).collect();

    for epoch in 1..=cfg.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            let lr = cfg.learning_rate * 0.5 * (1.0 + math::cos(core::f64::consts::PI * step as f64 / total_steps));
            step += 1;
            let loss =
                train_step(data, cfg, &mut model, &mut queue, thresholds.as_mut(), &prior, batch, nl, lr, &mut rng)?;
            loss_sum.sup += loss.sup;
            loss_sum.cls += loss.cls;
            loss_sum.conf += loss.conf;
            loss_sum.total += loss.total;
            loss_sum.retained_fraction += loss.retained_fraction;
        }
        let nb = batches_per_epoch as f64;
        let loss = LossBreakdown {
            sup: loss_sum.sup / nb,
            cls: loss_sum.cls / nb,
            conf: loss_sum.conf / nb,
            total: loss_sum.total / nb,
            retained_fraction: loss_sum.retained_fraction / nb,
        };

        let preds = model.predict_all(&data.features);
        let argmax: Vec<usize> = preds.columns().map(math::argmax).collect();
        let report = eval::evaluate(&argmax[nl..], &data.truth[nl..], &data.partition)?;
        let b_m = prediction_bias(data, &preds)?;
        let b_s = self_label_bias(data, &preds, &prior, cfg.conditional, &cfg.sinkhorn)?;
        log.records.push(EpochRecord {
            epoch,
            loss,
            seen_acc: report.seen,
            novel_acc: report.novel,
            all_acc: report.all,
            b_m,
            b_s,
            bias_gap: (b_m - b_s).abs(),
            retained_fraction: loss.retained_fraction,
            prior: prior.as_slice().to_vec(),
        });
        if let PriorMode::Adaptive { momentum } = cfg.prior {
            prior = estimate_prior_adaptive(&prior, &preds, momentum)?;
        }
    }
    Ok((model, log))
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    data: &Dataset,
    cfg: &TrainConfig,
    model: &mut ToyModel,
    queue: &mut LogitQueue,
    thresholds: Option<&mut ThresholdState>,
    prior: &ClassPrior,
    batch: &[usize],
    nl: usize,
    lr: f64,
    rng: &mut Rng,
) -> Result<LossBreakdown, HarnessError> {
    let k = model.k;
    let b = batch.len();
    let samples: Vec<Sample> = batch
        .iter()
        .map(|&i| {
            let x = data.features.row(i);
            let weak = weak_view(x, data, rng);
            let strong = strong_view(x, data, rng);
            let locals = (0..cfg.multiview).map(|_| local_view(x, data, rng)).collect();
            let p_weak = model.predict(&weak);
            let label = (i < nl).then(|| data.truth[i]);
            Sample { weak, strong, locals, p_weak, label }
        })
        .collect();

    for s in &samples {
        queue.push(s.p_weak.clone(), s.label);
    }
    let q_all = queue.self_labels(k, prior, &data.partition, cfg.conditional, &cfg.sinkhorn)?;
    let offset = queue.len() - b;
    let q = q_all.select_columns(&(offset..queue.len()).collect::<Vec<_>>());

    let mut weak_cols = Vec::with_capacity(k * b);
    for s in &samples {
        weak_cols.extend_from_slice(&s.p_weak);
    }
    let p_weak = ProbMatrix::from_col_major_trusted(k, b, weak_cols);

    let mut gw = vec![0.0; k * model.d];
    let mut gb = vec![0.0; k];
    let w = cfg.weights;

    // supervised
    let lab: Vec<usize> = (0..b).filter(|&j| samples[j].label.is_some()).collect();
    let sup = if lab.is_empty() {
        0.0
    } else {
        let labels: Vec<usize> = lab.iter().map(|&j| samples[j].label.unwrap_or(0)).collect();
        let scale = w.sup / lab.len() as f64;
        for (&j, &y) in lab.iter().zip(&labels) {
            let mut g = samples[j].p_weak.clone();
            g[y] -= 1.0;
            model.accumulate(&mut gw, &mut gb, &g, &samples[j].weak, scale);
        }
        objectives::supervised_loss(&labels, &p_weak.select_columns(&lab))?
    };

    // clustering, single or multi-view
    let views = cfg.multiview + 1;
    let scale = w.cls / (views * b) as f64;
    let mut local_preds: Vec<Vec<f64>> = vec![Vec::with_capacity(k * b); cfg.multiview];
    for (j, s) in samples.iter().enumerate() {
        let target = q.column(j);
        let g: Vec<f64> = s.p_weak.iter().zip(target).map(|(p, t)| p - t).collect();
        model.accumulate(&mut gw, &mut gb, &g, &s.weak, scale);
        for (v, x) in s.locals.iter().enumerate() {
            let p = model.predict(x);
            let g: Vec<f64> = p.iter().zip(target).map(|(p, t)| p - t).collect();
            model.accumulate(&mut gw, &mut gb, &g, x, scale);
            local_preds[v].extend(p);
        }
    }
    let locals: Vec<ProbMatrix> =
        local_preds.into_iter().map(|c| ProbMatrix::from_col_major_trusted(k, b, c)).collect();
    let cls = objectives::clustering_loss_multiview(&q, &p_weak, &locals)?;

    // confidence
    let (conf, retained) = if cfg.confidence_loss {
        let pseudo: PseudoBatch = match (thresholds, cfg.threshold) {
            (Some(state), _) => {
                state.update(&p_weak)?;
                state.pseudo_batch(&p_weak)?
            }
            (None, ThresholdPolicy::Static { tau }) => threshold::pseudo_batch_with(&p_weak, |_| tau),
            (None, _) => threshold::pseudo_batch_with(&p_weak, |_| 1.0),
        };
        let mut strong_cols = Vec::with_capacity(k * b);
        let scale = w.conf / b as f64;
        for (j, s) in samples.iter().enumerate() {
            let p = model.predict(&s.strong);
            if pseudo.mask[j] {
                let mut g = p.clone();
                g[pseudo.labels[j]] -= 1.0;
                model.accumulate(&mut gw, &mut gb, &g, &s.strong, scale);
            }
            strong_cols.extend(p);
        }
        let strong = ProbMatrix::from_col_major_trusted(k, b, strong_cols);
        (objectives::confidence_loss(&pseudo, &strong)?, pseudo.retained_fraction())
    } else {
        (0.0, 0.0)
    };

    for (p, g) in model.weights.iter_mut().zip(&gw) {
        *p -= lr * g;
    }
    for (p, g) in model.bias.iter_mut().zip(&gb) {
        *p -= lr * g;
    }
    let mut loss = objectives::total_loss_weighted(sup, cls, conf, &w)?;
    loss.retained_fraction = retained;
    Ok(loss)
}

/// One row of a bias trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub epoch: usize,
    pub b_m: f64,
    pub b_s: f64,
    pub bias_gap: f64,
}

pub fn bias_rows(log: &RunLog, epochs: &[usize]) -> Result<Vec<BiasRow>, HarnessError> {
    let n = log.records.len();
    epochs
        .iter()
        .map(|&e| {
            if e == 0 || e > n {
                return Err(HarnessError::EpochOutOfRange { epoch: e, epochs: n });
            }
            let r = &log.records[e - 1];
            Ok(BiasRow { epoch: e, b_m: r.b_m, b_s: r.b_s, bias_gap: r.bias_gap })
        })
        .collect()
}

/// Trains and extracts `(epoch, B_m, B_s, |B_m − B_s|)` at the requested epochs.
pub fn run_bias_trajectory(data: &Dataset, cfg: &TrainConfig, epochs: &[usize]) -> Result<Vec<BiasRow>, HarnessError> {
    if let Some(&epoch) = epochs.iter().find(|&&e| e == 0 || e > cfg.epochs) {
        return Err(HarnessError::EpochOutOfRange { epoch, epochs: cfg.epochs });
    }
    let (_, log) = train(data, cfg)?;
    bias_rows(&log, epochs)
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig { k_total: 4, feature_dim: 4, samples_per_class: 30, ..SyntheticConfig::default() }
    }

    #[test]
    fn seen_novel_split() {
        let data = generate_dataset(&SyntheticConfig::default()).unwrap();
        assert_eq!(data.partition.seen().len(), 5);
        assert_eq!(data.partition.novel().len(), 5);
        assert!(data.labeled.labels().iter().all(|&c| c < 5));
        assert_eq!(data.labeled.len(), 250);
    }

    #[test]
    fn imbalance_profile() {
        assert_eq!(class_counts(10, 100, 1.0), vec![100; 10]);
        let c = class_counts(10, 100, 10.0);
        assert_eq!((c[0], c[9]), (100, 10));
        assert!(c.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn centroid_spacing() {
        let mu = centroids(6, 3, 6.0).unwrap();
        for i in 0..6 {
            for j in 0..i {
                let d: f64 = mu[i].iter().zip(&mu[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!(math::sqrt(d) >= 6.0 - 1e-12);
            }
        }
        assert!(matches!(centroids(7, 3, 6.0), Err(HarnessError::InfeasibleSeparation { .. })));
    }

    #[test]
    fn views() {
        let data = generate_dataset(&small()).unwrap();
        let x = data.features.row(0);
        let mut rng = Rng::new(0, 0);
        assert_eq!(noisy_view(x, 0.0, &mut rng), x);
        assert_ne!(weak_view(x, &data, &mut rng), weak_view(x, &data, &mut rng));
        let l = local_view(x, &data, &mut rng);
        assert_eq!(l.iter().filter(|&&v| v == 0.0).count(), 2);
    }

    #[test]
    fn queue_is_fifo() {
        let mut q = LogitQueue::new(3);
        for i in 0..5 {
            q.push(vec![i as f64], None);
        }
        let kept: Vec<f64> = q.iter().map(|e| e.0[0]).collect();
        assert_eq!(kept, [2.0, 3.0, 4.0]);
    }

    #[test]
    fn adaptive_prior_examples() {
        let cur = ClassPrior::new(vec![0.5, 0.5]).unwrap();
        let preds = ProbMatrix::from_columns(2, &[vec![0.3, 0.7]]).unwrap();
        let p = estimate_prior_adaptive(&cur, &preds, 0.9).unwrap();
        assert!((p.get(0) - 0.48).abs() < 1e-12 && (p.get(1) - 0.52).abs() < 1e-12);
        let p = estimate_prior_adaptive(&cur, &preds, 0.0).unwrap();
        assert!((p.get(0) - 0.3).abs() < 1e-12);
        let p = estimate_prior_adaptive(&cur, &preds, 1.0 - 1e-9).unwrap();
        assert!((p.get(0) - 0.5).abs() < 1e-9);
        assert!(estimate_prior_adaptive(&cur, &ProbMatrix::uniform(3, 1), 0.5).is_err());
    }

    #[test]
    fn zero_epochs_leave_model_untouched() {
        let data = generate_dataset(&small()).unwrap();
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        let (model, log) = train(&data, &cfg).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(model, ToyModel::init(4, 4, &mut Rng::new(cfg.seed, 1)));
    }

    #[test]
    fn pinned_labels_give_zero_self_label_bias() {
        let data = generate_dataset(&small()).unwrap();
        let all = LabeledBlock::new(data.truth.clone(), &PartitionSpec::from_seen(4, (0..4).collect(), 1, 1).unwrap())
            .unwrap();
        let full = Dataset { labeled: all, ..data };
        let preds = ProbMatrix::uniform(4, full.m());
        let b = self_label_bias(&full, &preds, &ClassPrior::uniform(4), true, &SinkhornConfig::training()).unwrap();
        assert_eq!(b, 0.0);
    }

    #[test]
    fn trajectory_epoch_range() {
        let data = generate_dataset(&small()).unwrap();
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        assert!(matches!(run_bias_trajectory(&data, &cfg, &[3]), Err(HarnessError::EpochOutOfRange { .. })));
        assert_eq!(run_bias_trajectory(&data, &cfg, &[1, 2]).unwrap().len(), 2);
    }

    #[test]
    fn moving_average_window() {
        assert_eq!(moving_average(&[1.0, 3.0, 5.0], 2), [1.0, 2.0, 4.0]);
    }
}
