//! Matched clustering accuracy, distribution bias and class-count estimation.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::Features;
use crate::prob::PartitionSpec;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("cost matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },
    #[error("cost matrix has a non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("index {index} at position {position} is out of range (< {bound})")]
    IndexOutOfRange { position: usize, index: usize, bound: usize },
    #[error("inputs have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("no samples fall in the evaluated subset")]
    EmptySubset,
    #[error("distributions have lengths {0} and {1}")]
    ShapeMismatch(usize, usize),
    #[error("labeled subset is empty")]
    EmptyLabeledSubset,
    #[error("candidate k = {k} is outside [1, {m}]")]
    InvalidCandidate { k: usize, m: usize },
}

/// Minimum-cost assignment on a square matrix given as rows.
/// Returns `σ` with row `i` assigned to column `σ[i]`, and `Σ cost[i][σ(i)]`.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64), EvalError> {
    let n = cost.len();
    for (i, row) in cost.iter().enumerate() {
        if row.len() != n {
            return Err(EvalError::NonSquare { rows: n, cols: row.len() });
        }
        if let Some(j) = row.iter().position(|x| !x.is_finite()) {
            return Err(EvalError::NonFinite(i, j));
        }
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    // Shortest augmenting paths with row/column potentials, 1-based with a
    // virtual column 0.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut sigma = vec![0usize; n];
    for j in 1..=n {
        sigma[p[j] - 1] = j - 1;
    }
    let total = sigma.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    Ok((sigma, total))
}

/// Best bijection between predicted clusters and true classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `mapping[cluster] = class`, over the zero-padded square size.
    pub mapping: Vec<usize>,
    pub matched_accuracy: f64,
}

/// Hungarian-matched accuracy over all pairs, padding the contingency table
/// to a square.
pub fn matched_accuracy(pred: &[usize], truth: &[usize]) -> Result<MatchResult, EvalError> {
    matched_accuracy_sized(pred, truth, 0)
}

/// As [`matched_accuracy`] with the table padded to at least `min_size`.
pub fn matched_accuracy_sized(pred: &[usize], truth: &[usize], min_size: usize) -> Result<MatchResult, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::EmptySubset);
    }
    let kp = pred.iter().max().map_or(0, |&x| x + 1);
    let kt = truth.iter().max().map_or(0, |&x| x + 1);
    let n = kp.max(kt).max(min_size);
    let mut counts = vec![vec![0.0; n]; n];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[p][t] += 1.0;
    }
    let neg: Vec<Vec<f64>> = counts.iter().map(|r| r.iter().map(|c| -c).collect()).collect();
    let (mapping, total) = hungarian(&neg)?;
    Ok(MatchResult { mapping, matched_accuracy: -total / pred.len() as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyMode {
    Seen,
    Novel,
    All,
}

fn check_indices(xs: &[usize], bound: usize) -> Result<(), EvalError> {
    match xs.iter().position(|&x| x >= bound) {
        Some(position) => Err(EvalError::IndexOutOfRange { position, index: xs[position], bound }),
        None => Ok(()),
    }
}

/// Seen: raw index agreement on seen-class samples. Novel: matched accuracy
/// on novel-class samples. All: joint matched accuracy.
pub fn clustering_accuracy(
    pred: &[usize],
    truth: &[usize],
    mode: AccuracyMode,
    partition: &PartitionSpec,
) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len()));
    }
    let k = partition.k_total();
    check_indices(truth, k)?;
    check_indices(pred, k)?;
    let keep = |t: usize| match mode {
        AccuracyMode::Seen => partition.is_seen(t),
        AccuracyMode::Novel => !partition.is_seen(t),
        AccuracyMode::All => true,
    };
    let (p, t): (Vec<usize>, Vec<usize>) =
        pred.iter().zip(truth).filter(|(_, &t)| keep(t)).map(|(&p, &t)| (p, t)).unzip();
    if t.is_empty() {
        return Err(EvalError::EmptySubset);
    }
    match mode {
        AccuracyMode::Seen => Ok(p.iter().zip(&t).filter(|(a, b)| a == b).count() as f64 / t.len() as f64),
        _ => Ok(matched_accuracy(&p, &t)?.matched_accuracy),
    }
}

/// Accuracies in every mode. `seen_joint` scores seen-class samples under
/// the joint mapping instead of raw indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seen: Option<f64>,
    pub novel: Option<f64>,
    pub all: f64,
    pub seen_joint: Option<f64>,
    pub mapping: Vec<usize>,
}

pub fn evaluate(pred: &[usize], truth: &[usize], partition: &PartitionSpec) -> Result<EvalReport, EvalError> {
    let all = clustering_accuracy(pred, truth, AccuracyMode::All, partition)?;
    let optional = |mode| match clustering_accuracy(pred, truth, mode, partition) {
        Ok(a) => Ok(Some(a)),
        Err(EvalError::EmptySubset) => Ok(None),
        Err(e) => Err(e),
    };
    let seen = optional(AccuracyMode::Seen)?;
    let novel = optional(AccuracyMode::Novel)?;
    let mapping = matched_accuracy_sized(pred, truth, partition.k_total())?.mapping;
    let seen_idx: Vec<usize> = (0..truth.len()).filter(|&i| partition.is_seen(truth[i])).collect();
    let seen_joint = (!seen_idx.is_empty())
        .then(|| seen_idx.iter().filter(|&&i| mapping[pred[i]] == truth[i]).count() as f64 / seen_idx.len() as f64);
    Ok(EvalReport { seen, novel, all, seen_joint, mapping })
}

/// `Σ |aᵢ − bᵢ|`.
pub fn manhattan_bias(a: &[f64], b: &[f64]) -> Result<f64, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::ShapeMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum())
}

pub const KMEANS_RESTARTS: usize = 10;
pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, mu) in centroids.iter().enumerate() {
        let d = sq_dist(x, mu);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_plus_plus(x: &Features, k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let m = x.m();
    let mut centroids = vec![x.row(rng.index(m)).to_vec()];
    let mut d2: Vec<f64> = x.rows().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.uniform() * total;
            let mut chosen = m - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.index(m)
        };
        let c = x.row(pick).to_vec();
        for (i, r) in x.rows().enumerate() {
            d2[i] = d2[i].min(sq_dist(r, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// One Lloyd run from k-means++ seeding. Empty clusters keep their centroid.
pub fn kmeans_single(x: &Features, k: usize, rng: &mut Rng) -> KMeans {
    let (m, d) = (x.m(), x.d());
    let mut centroids = seed_plus_plus(x, k, rng);
    let mut assignments = vec![0usize; m];
    for _ in 0..KMEANS_MAX_ITERS {
        for (i, r) in x.rows().enumerate() {
            assignments[i] = nearest(r, &centroids).0;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (i, r) in x.rows().enumerate() {
            let c = assignments[i];
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(r) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let next: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(crate::math::sqrt(sq_dist(&next, &centroids[c])));
            centroids[c] = next;
        }
        if shift <= KMEANS_TOL {
            break;
        }
    }
    let mut inertia = 0.0;
    for (i, r) in x.rows().enumerate() {
        let (c, dist) = nearest(r, &centroids);
        assignments[i] = c;
        inertia += dist;
    }
    KMeans { assignments, centroids, inertia }
}

/// Stream for restart `r` of a run with `k` clusters.
pub fn restart_stream(base: &Rng, k: usize, restart: usize) -> Rng {
    base.derive(((k as u64) << 32) | restart as u64)
}

/// Best of [`KMEANS_RESTARTS`] runs by inertia; ties keep the earlier run.
pub fn kmeans(x: &Features, k: usize, rng: &Rng) -> Result<KMeans, EvalError> {
    if k == 0 || k > x.m() {
        return Err(EvalError::InvalidCandidate { k, m: x.m() });
    }
    let runs: Vec<KMeans> = (0..KMEANS_RESTARTS).map(|r| kmeans_single(x, k, &mut restart_stream(rng, k, r))).collect();
    Ok(best_run(runs))
}

/// Picks the lowest-inertia run, earliest on ties.
pub fn best_run(runs: Vec<KMeans>) -> KMeans {
    let mut best: Option<KMeans> = None;
    for run in runs {
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    best.expect("at least one restart")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCountEstimate {
    pub k: usize,
    /// `(candidate, matched accuracy on the labeled subset)`.
    pub scores: Vec<(usize, f64)>,
}

/// Matched accuracy of a clustering on the labeled subset.
pub fn labeled_accuracy(assignments: &[usize], labeled: &[(usize, usize)]) -> Result<f64, EvalError> {
    let pred: Vec<usize> = labeled.iter().map(|&(i, _)| assignments[i]).collect();
    let truth: Vec<usize> = labeled.iter().map(|&(_, y)| y).collect();
    Ok(matched_accuracy(&pred, &truth)?.matched_accuracy)
}

/// Grid search over `candidates`; ties go to the smaller k.
pub fn select_num_classes(scores: Vec<(usize, f64)>) -> ClassCountEstimate {
    let mut best = scores[0];
    for &(k, a) in &scores[1..] {
        if a > best.1 || (a == best.1 && k < best.0) {
            best = (k, a);
        }
    }
    ClassCountEstimate { k: best.0, scores }
}

pub fn check_candidates(x: &Features, labeled: &[(usize, usize)], candidates: &[usize]) -> Result<(), EvalError> {
    if labeled.is_empty() || candidates.is_empty() {
        return Err(EvalError::EmptyLabeledSubset);
    }
    let idx: Vec<usize> = labeled.iter().map(|&(i, _)| i).collect();
    check_indices(&idx, x.m())?;
    for &k in candidates {
        if k == 0 || k > x.m() {
            return Err(EvalError::InvalidCandidate { k, m: x.m() });
        }
    }
    Ok(())
}

/// K-means for every candidate, scored by matched accuracy on the labeled
/// samples `(index, class)`.
pub fn estimate_num_classes(
    x: &Features,
    labeled: &[(usize, usize)],
    candidates: &[usize],
    rng: &Rng,
) -> Result<ClassCountEstimate, EvalError> {
    check_candidates(x, labeled, candidates)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for &k in candidates {
        let run = kmeans(x, k, rng)?;
        scores.push((k, labeled_accuracy(&run.assignments, labeled)?));
    }
    Ok(select_num_classes(scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: &mut Vec<usize>, best: &mut f64) {
            let n = cost.len();
            if row == n {
                let s: f64 = acc.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
                *best = best.min(s);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    acc.push(j);
                    go(cost, row + 1, used, acc, best);
                    acc.pop();
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        go(cost, 0, &mut vec![false; cost.len()], &mut Vec::new(), &mut best);
        best
    }

    #[test]
    fn hungarian_examples() {
        let id = vec![vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]];
        assert_eq!(hungarian(&id).unwrap(), (vec![0, 1, 2], 0.0));
        assert_eq!(hungarian(&[vec![1.0, 2.0], vec![2.0, 1.0]]).unwrap(), (vec![0, 1], 2.0));
        assert_eq!(hungarian(&[]).unwrap(), (vec![], 0.0));
        assert!(matches!(hungarian(&[vec![1.0, 2.0]]), Err(EvalError::NonSquare { .. })));
        assert_eq!(hungarian(&[vec![f64::NAN]]), Err(EvalError::NonFinite(0, 0)));
    }

    #[test]
    fn hungarian_matches_brute_force() {
        let mut rng = Rng::new(11, 0);
        for t in 0..300 {
            let n = 1 + t % 7;
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| if t % 2 == 0 { rng.index(5) as f64 } else { rng.normal() }).collect())
                .collect();
            let (sigma, total) = hungarian(&cost).unwrap();
            let mut seen = sigma.clone();
            seen.sort_unstable();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
            assert_eq!(total, brute_force(&cost));
        }
    }

    #[test]
    fn accuracy_examples() {
        let part = PartitionSpec::from_seen(4, vec![0, 1], 1, 1).unwrap();
        let truth = [0, 1, 2, 3, 2, 3];
        for mode in [AccuracyMode::Seen, AccuracyMode::Novel, AccuracyMode::All] {
            assert_eq!(clustering_accuracy(&truth, &truth, mode, &part).unwrap(), 1.0);
        }
        let swapped = [0, 1, 3, 2, 3, 2];
        assert_eq!(clustering_accuracy(&swapped, &truth, AccuracyMode::Novel, &part).unwrap(), 1.0);

        let part = PartitionSpec::from_seen(2, vec![], 1, 1).unwrap();
        let acc = clustering_accuracy(&[1, 1, 0, 0, 0, 0], &[0, 0, 0, 1, 1, 1], AccuracyMode::Novel, &part).unwrap();
        assert!((acc - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn seen_mode_does_not_match() {
        let part = PartitionSpec::from_seen(2, vec![0, 1], 1, 1).unwrap();
        assert_eq!(clustering_accuracy(&[1, 0], &[0, 1], AccuracyMode::Seen, &part).unwrap(), 0.0);
        assert_eq!(clustering_accuracy(&[1, 0], &[0, 1], AccuracyMode::All, &part).unwrap(), 1.0);
    }

    #[test]
    fn accuracy_errors() {
        let part = PartitionSpec::from_seen(2, vec![0, 1], 1, 1).unwrap();
        assert_eq!(clustering_accuracy(&[0], &[0], AccuracyMode::Novel, &part), Err(EvalError::EmptySubset));
        assert!(matches!(
            clustering_accuracy(&[0], &[2], AccuracyMode::All, &part),
            Err(EvalError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn manhattan_examples() {
        assert_eq!(manhattan_bias(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert!((manhattan_bias(&[0.5, 0.5], &[0.3, 0.7]).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(manhattan_bias(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        assert_eq!(manhattan_bias(&[1.0], &[0.5, 0.5]), Err(EvalError::ShapeMismatch(1, 2)));
    }

    #[test]
    fn kmeans_separates_points() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 3) as f64 * 10.0, 0.01 * (i / 3) as f64]).collect();
        let x = Features::from_rows(&rows).unwrap();
        let labeled: Vec<(usize, usize)> = (0..6).map(|i| (i, i % 3)).collect();
        let est = estimate_num_classes(&x, &labeled, &[1, 2, 3, 4, 5], &Rng::new(0, 0)).unwrap();
        assert_eq!(est.k, 3);
    }

    #[test]
    fn identical_features_pick_smallest_candidate() {
        let x = Features::new(20, 2, vec![1.5; 40]).unwrap();
        let labeled = [(0, 0), (1, 1)];
        let est = estimate_num_classes(&x, &labeled, &[2, 3, 4], &Rng::new(0, 0)).unwrap();
        assert_eq!(est.k, 2);
    }

    proptest! {
        #[test]
        fn matching_is_relabeling_invariant(
            pred in prop::collection::vec(0usize..4, 1..40),
            seed in any::<u64>(),
        ) {
            let truth: Vec<usize> = pred.iter().enumerate().map(|(i, &p)| (p + i % 2) % 4).collect();
            let mut perm: Vec<usize> = (0..4).collect();
            Rng::new(seed, 0).shuffle(&mut perm);
            let relabeled: Vec<usize> = pred.iter().map(|&p| perm[p]).collect();
            let part = PartitionSpec::from_seen(4, vec![0], 1, 1).unwrap();
            let a = clustering_accuracy(&pred, &truth, AccuracyMode::All, &part).unwrap();
            let b = clustering_accuracy(&relabeled, &truth, AccuracyMode::All, &part).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn manhattan_is_a_metric(
            a in prop::collection::vec(0.0f64..1.0, 5),
            b in prop::collection::vec(0.0f64..1.0, 5),
            c in prop::collection::vec(0.0f64..1.0, 5),
        ) {
            let ab = manhattan_bias(&a, &b).unwrap();
            prop_assert_eq!(ab, manhattan_bias(&b, &a).unwrap());
            prop_assert!(ab <= manhattan_bias(&a, &c).unwrap() + manhattan_bias(&c, &b).unwrap() + 1e-12);
            prop_assert_eq!(manhattan_bias(&a, &a).unwrap(), 0.0);
        }
    }
}
