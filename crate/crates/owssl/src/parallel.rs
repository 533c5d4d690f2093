//! Thread-parallel drivers. Work is split into fixed units with their own
//! random streams and merged in unit order, so results do not depend on the
//! thread count.

use owssl_core::eval::{self, ClassCountEstimate, EvalError, KMeans};
use owssl_core::harness::{self, Dataset, HarnessError, RunLog, SyntheticConfig, ToyModel, TrainConfig};
use owssl_core::theory::{self, EcsReport, PopulationSpec, TheoryError};
use owssl_core::{Features, Rng};
use rayon::prelude::*;

/// Worker cap from `OWSSL_THREADS`, if set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var("OWSSL_THREADS").ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Runs `f` on a pool sized by [`thread_cap`] (rayon's default otherwise).
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap() {
        builder = builder.num_threads(n);
    }
    match builder.build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Same result as [`theory::monte_carlo_ecs`], with chunks spread over threads.
pub fn monte_carlo_ecs(spec: &PopulationSpec, trials: u64, rng: &Rng) -> Result<EcsReport, TheoryError> {
    if trials == 0 {
        return Err(TheoryError::NoTrials);
    }
    let plan = theory::chunk_plan(trials);
    let chunks = plan
        .par_iter()
        .enumerate()
        .map(|(c, &t)| theory::monte_carlo_chunk(spec, rng, c, t))
        .collect::<Result<Vec<_>, _>>()?;
    let acc = theory::reduce_chunks(&chunks).expect("at least one chunk");
    theory::ecs_report(spec, &acc, rng.seed())
}

/// Same result as [`eval::kmeans`], restarts in parallel.
pub fn kmeans(x: &Features, k: usize, rng: &Rng) -> Result<KMeans, EvalError> {
    if k == 0 || k > x.m() {
        return Err(EvalError::InvalidCandidate { k, m: x.m() });
    }
    let runs: Vec<KMeans> = (0..eval::KMEANS_RESTARTS)
        .into_par_iter()
        .map(|r| eval::kmeans_single(x, k, &mut eval::restart_stream(rng, k, r)))
        .collect();
    Ok(eval::best_run(runs))
}

/// Same result as [`eval::estimate_num_classes`], candidates and restarts in
/// parallel.
pub fn estimate_num_classes(
    x: &Features,
    labeled: &[(usize, usize)],
    candidates: &[usize],
    rng: &Rng,
) -> Result<ClassCountEstimate, EvalError> {
    eval::check_candidates(x, labeled, candidates)?;
    let scores = candidates
        .par_iter()
        .map(|&k| {
            let run = kmeans(x, k, rng)?;
            Ok((k, eval::labeled_accuracy(&run.assignments, labeled)?))
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(eval::select_num_classes(scores))
}

/// One finished training run of a sweep.
#[derive(Debug, Clone)]
pub struct SweepRun {
    pub offset: u64,
    pub data: Dataset,
    pub model: ToyModel,
    pub log: RunLog,
}

/// Trains with seeds shifted by `0..n`, one independent run per worker.
pub fn train_sweep(data: &SyntheticConfig, train: &TrainConfig, n: u64) -> Result<Vec<SweepRun>, HarnessError> {
    (0..n)
        .into_par_iter()
        .map(|offset| {
            let dcfg = SyntheticConfig { seed: data.seed + offset, ..data.clone() };
            let tcfg = TrainConfig { seed: train.seed + offset, ..train.clone() };
            let ds = harness::generate_dataset(&dcfg)?;
            let (model, log) = harness::train(&ds, &tcfg)?;
            Ok(SweepRun { offset, data: ds, model, log })
        })
        .collect()
}
