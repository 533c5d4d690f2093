//! Subcommands `solve`, `theory`, `train`, `eval` and `gen-data`.
//!
//! Exit codes: 0 success, 1 computation failure, 2 usage or parse error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use owssl_core::eval::{self, EvalError, EvalReport};
use owssl_core::harness::{self, Dataset, HarnessError, RunLog, ThresholdPolicy, ToyModel, TrainConfig};
use owssl_core::math::argmax;
use owssl_core::sinkhorn::{self, SinkhornConfig, SinkhornError};
use owssl_core::theory::{EcsReport, PopulationSpec, TheoryError};
use owssl_core::{ClassPrior, LabeledBlock, PartitionSpec, ProbError, Rng};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig, SCHEMA_VERSION};
use crate::formats::{self, FormatError};
use crate::parallel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Static threshold used when hierarchical thresholding is ablated.
pub const ABLATED_STATIC_TAU: f64 = 0.95;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("invalid population: {0}")]
    Spec(TheoryError),
    #[error(transparent)]
    Theory(TheoryError),
    #[error(transparent)]
    Sinkhorn(#[from] SinkhornError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Prob(#[from] ProbError),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Format(_) | CliError::Config(_) | CliError::Spec(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "owssl", version, about = "Open-world semi-supervised self-labeling toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the self-label assignment for a probability matrix.
    Solve(SolveArgs),
    /// Closed-form and Monte Carlo reliability of class-distribution estimators.
    Theory(TheoryArgs),
    /// Train the linear model on a synthetic dataset.
    Train(TrainArgs),
    /// Seen, novel and all-class accuracy of predictions.
    Eval(EvalArgs),
    /// Write a synthetic dataset to disk.
    GenData(GenDataArgs),
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Class-by-sample probability matrix (CSV).
    #[arg(long)]
    pub probs: PathBuf,
    /// Class prior as a K×1 matrix (CSV).
    #[arg(long)]
    pub prior: PathBuf,
    /// Labels of the leading columns.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Pin the labeled columns (default when --labels is given).
    #[arg(long, conflicts_with = "unconditional")]
    pub conditional: bool,
    /// Ignore labels and solve over all columns.
    #[arg(long)]
    pub unconditional: bool,
    /// Seen classes; defaults to the classes present in the labels.
    #[arg(long)]
    pub seen: Option<String>,
    /// Entropy weight; the kernel is `P^(1/ε)`.
    #[arg(long, default_value_t = 0.1, conflicts_with = "inverse_temperature")]
    pub epsilon: f64,
    /// Kernel exponent `1/ε`, as an alternative to --epsilon.
    #[arg(long)]
    pub inverse_temperature: Option<f64>,
    #[arg(long, default_value_t = 10)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0.0)]
    pub tol: f64,
    /// Output assignment matrix (CSV).
    #[arg(long)]
    pub out: PathBuf,
    /// Diagnostics JSON; printed to stderr when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    /// Labeled class distribution, comma separated.
    #[arg(long)]
    pub prior_labeled: String,
    /// Unlabeled class distribution, comma separated.
    #[arg(long)]
    pub prior_unlabeled: String,
    #[arg(long)]
    pub n_labeled: u64,
    #[arg(long)]
    pub n_unlabeled: u64,
    /// Overall prior; checked against the labeled/unlabeled mixture.
    #[arg(long)]
    pub prior: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    /// Conditional self-labeling.
    Conditional,
    /// Pseudo-label confidence loss.
    Plcr,
    /// Hierarchical thresholds (replaced by a static threshold).
    Owht,
    /// Local views in the clustering loss.
    Multiview,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Components to disable.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub ablate: Vec<Component>,
    /// Number of seeds, shifted from the configured ones.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Paired comparison with this component disabled.
    #[arg(long, value_enum)]
    pub compare: Option<Component>,
    /// Also write tidy (epoch, metric, value) CSV.
    #[arg(long)]
    pub emit_plot_data: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted cluster indices.
    #[arg(long)]
    pub pred: PathBuf,
    /// True class indices.
    #[arg(long)]
    pub truth: PathBuf,
    /// Total number of classes.
    #[arg(long)]
    pub k: usize,
    /// Seen classes, comma separated.
    #[arg(long)]
    pub seen: String,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Run configuration (JSON); only the data section is used.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("owssl: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Solve(a) => cmd_solve(&a),
        Command::Theory(a) => cmd_theory(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::GenData(a) => cmd_gen_data(&a),
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, contents).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

fn emit(out: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match out {
        Some(p) => write(p, contents),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(contents.as_bytes())
                .map_err(|source| CliError::Write { path: PathBuf::from("<stdout>"), source })
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

#[derive(Debug, Serialize)]
pub struct SolveReport {
    pub mode: &'static str,
    pub k: usize,
    pub n: usize,
    pub n_labeled: usize,
    pub epsilon: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub iters_used: usize,
    pub converged: bool,
    pub row_marginal_err: f64,
    pub col_marginal_err: f64,
    pub residual_clamped: bool,
}

pub fn cmd_solve(a: &SolveArgs) -> Result<(), CliError> {
    if a.conditional && a.labels.is_none() {
        return Err(usage("--conditional needs --labels"));
    }
    let cfg = match a.inverse_temperature {
        Some(t) => SinkhornConfig::from_inverse_temperature(t, a.max_iters, a.tol),
        None => SinkhornConfig::new(a.epsilon, a.max_iters, a.tol),
    }
    .map_err(|e| usage(e.to_string()))?;
    let p = formats::parse_matrix(&formats::read_file(&a.probs)?)?;
    let prior = formats::parse_prior(&formats::read_file(&a.prior)?)?;
    if prior.k() != p.k() {
        return Err(FormatError::DimensionMismatch(format!("prior has k={}, matrix has k={}", prior.k(), p.k())).into());
    }
    let conditional = !a.unconditional && a.labels.is_some();
    let labels = match (&a.labels, conditional) {
        (Some(path), true) => formats::parse_labels(&formats::read_file(path)?)?,
        _ => Vec::new(),
    };
    if labels.len() > p.n() {
        return Err(FormatError::DimensionMismatch(format!("{} labels for {} columns", labels.len(), p.n())).into());
    }
    let block = if labels.is_empty() {
        LabeledBlock::empty()
    } else {
        let seen = match &a.seen {
            Some(s) => formats::parse_index_list(s)?,
            None => {
                let mut s = labels.clone();
                s.sort_unstable();
                s.dedup();
                s
            }
        };
        // Sample counts only matter for the seen set here.
        let part = PartitionSpec::from_seen(p.k(), seen, 0, 1).map_err(|e| usage(e.to_string()))?;
        LabeledBlock::new(labels.clone(), &part).map_err(|e| usage(e.to_string()))?
    };
    let out = if conditional {
        sinkhorn::solve_conditional(&p, &prior, &block, &cfg)?
    } else {
        sinkhorn::solve_unconditional(&p, &prior, &cfg)?
    };
    write(&a.out, &formats::write_matrix(&out.q))?;
    let report = SolveReport {
        mode: if conditional { "conditional" } else { "unconditional" },
        k: p.k(),
        n: p.n(),
        n_labeled: block.len(),
        epsilon: cfg.epsilon,
        max_iters: cfg.max_iters,
        tol: cfg.tol,
        iters_used: out.iters_used,
        converged: out.converged,
        row_marginal_err: out.row_marginal_err,
        col_marginal_err: out.col_marginal_err,
        residual_clamped: out.residual_clamped,
    };
    let json = to_json(&report);
    match &a.report {
        Some(path) => write(path, &json),
        None => {
            eprint!("{json}");
            Ok(())
        }
    }
}

/// Theory output; `elapsed_seconds` is the last field so it sits on the
/// last line of the JSON.
#[derive(Debug, Serialize)]
pub struct TheoryOutput {
    #[serde(flatten)]
    pub report: EcsReport,
    pub elapsed_seconds: f64,
}

pub fn cmd_theory(a: &TheoryArgs) -> Result<(), CliError> {
    if a.trials == 0 {
        return Err(usage("--trials must be at least 1"));
    }
    let prior_of = |s: &str| -> Result<ClassPrior, CliError> {
        ClassPrior::new(formats::parse_real_list(s)?).map_err(|e| CliError::Spec(TheoryError::Prob(e)))
    };
    let pl = prior_of(&a.prior_labeled)?;
    let pu = prior_of(&a.prior_unlabeled)?;
    let spec = match &a.prior {
        Some(p) => PopulationSpec::with_prior(&prior_of(p)?, pl, pu, a.n_labeled, a.n_unlabeled),
        None => PopulationSpec::new(pl, pu, a.n_labeled, a.n_unlabeled),
    }
    .map_err(CliError::Spec)?;
    // Closed forms must exist before sampling starts.
    owssl_core::theory::ecs_uncon_closed(&spec).map_err(CliError::Spec)?;
    owssl_core::theory::ecs_con_closed(&spec).map_err(CliError::Spec)?;
    let start = Instant::now();
    let report = parallel::with_pool(|| parallel::monte_carlo_ecs(&spec, a.trials, &Rng::new(a.seed, 0)))
        .map_err(CliError::Theory)?;
    let out = TheoryOutput { report, elapsed_seconds: start.elapsed().as_secs_f64() };
    emit(a.out.as_deref(), &to_json(&out))
}

pub fn apply_ablation(cfg: &TrainConfig, components: &[Component]) -> TrainConfig {
    let mut c = cfg.clone();
    for comp in components {
        match comp {
            Component::Conditional => c.conditional = false,
            Component::Plcr => c.confidence_loss = false,
            Component::Owht => c.threshold = ThresholdPolicy::Static { tau: ABLATED_STATIC_TAU },
            Component::Multiview => c.multiview = 0,
        }
    }
    c
}

#[derive(Debug, Clone, Serialize)]
pub struct FinalMetrics {
    pub data_seed: u64,
    pub train_seed: u64,
    pub epochs: usize,
    pub seen_acc: Option<f64>,
    pub novel_acc: Option<f64>,
    pub all_acc: f64,
    pub b_m: Option<f64>,
    pub b_s: Option<f64>,
    pub mapping: Vec<usize>,
}

/// Accuracy of the final model on the unlabeled pool.
pub fn final_metrics(
    data: &Dataset,
    model: &ToyModel,
    log: &RunLog,
    data_seed: u64,
    train_seed: u64,
) -> Result<FinalMetrics, CliError> {
    let preds = model.predict_all(&data.features);
    let nl = data.n_labeled();
    let pred: Vec<usize> = preds.columns().map(argmax).collect();
    let r: EvalReport = eval::evaluate(&pred[nl..], &data.truth[nl..], &data.partition)?;
    Ok(FinalMetrics {
        data_seed,
        train_seed,
        epochs: log.records.len(),
        seen_acc: r.seen,
        novel_acc: r.novel,
        all_acc: r.all,
        b_m: log.last().map(|x| x.b_m),
        b_s: log.last().map(|x| x.b_s),
        mapping: r.mapping,
    })
}

#[derive(Serialize)]
struct RunLogHeader<'a> {
    schema_version: u32,
    kind: &'static str,
    data_seed: u64,
    train_seed: u64,
    ablate: &'a [Component],
}

pub fn runlog_jsonl(log: &RunLog, data_seed: u64, train_seed: u64, ablate: &[Component]) -> String {
    let header = RunLogHeader { schema_version: SCHEMA_VERSION, kind: "runlog", data_seed, train_seed, ablate };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for r in &log.records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn bias_csv(log: &RunLog) -> String {
    let mut out = String::from("epoch,b_m,b_s,bias_gap\n");
    for r in &log.records {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.epoch,
            formats::fmt_real(r.b_m),
            formats::fmt_real(r.b_s),
            formats::fmt_real(r.bias_gap)
        );
    }
    out
}

pub fn plot_csv(log: &RunLog) -> String {
    let mut out = String::from("epoch,metric,value\n");
    for r in &log.records {
        let mut row = |name: &str, v: f64| {
            let _ = writeln!(out, "{},{name},{}", r.epoch, formats::fmt_real(v));
        };
        row("loss_total", r.loss.total);
        row("loss_sup", r.loss.sup);
        row("loss_cls", r.loss.cls);
        row("loss_conf", r.loss.conf);
        row("all_acc", r.all_acc);
        if let Some(v) = r.seen_acc {
            row("seen_acc", v);
        }
        if let Some(v) = r.novel_acc {
            row("novel_acc", v);
        }
        row("b_m", r.b_m);
        row("b_s", r.b_s);
        row("bias_gap", r.bias_gap);
        row("retained_fraction", r.retained_fraction);
    }
    out
}

fn write_run(
    dir: &Path,
    run: &parallel::SweepRun,
    cfg: &RunConfig,
    ablate: &[Component],
    plot: bool,
) -> Result<FinalMetrics, CliError> {
    let (ds, ts) = (cfg.data.seed + run.offset, cfg.train.seed + run.offset);
    write(&dir.join("runlog.jsonl"), &runlog_jsonl(&run.log, ds, ts, ablate))?;
    write(&dir.join("bias.csv"), &bias_csv(&run.log))?;
    if plot {
        write(&dir.join("plot.csv"), &plot_csv(&run.log))?;
    }
    let m = final_metrics(&run.data, &run.model, &run.log, ds, ts)?;
    write(&dir.join("metrics.json"), &to_json(&m))?;
    Ok(m)
}

#[derive(Debug, Serialize)]
pub struct ArmSummary {
    pub ablate: Vec<Component>,
    pub mean_seen_acc: Option<f64>,
    pub mean_novel_acc: Option<f64>,
    pub mean_all_acc: f64,
    pub runs: Vec<FinalMetrics>,
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = xs.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(ablate: Vec<Component>, runs: Vec<FinalMetrics>) -> ArmSummary {
    ArmSummary {
        ablate,
        mean_seen_acc: mean_opt(runs.iter().map(|r| r.seen_acc)),
        mean_novel_acc: mean_opt(runs.iter().map(|r| r.novel_acc)),
        mean_all_acc: runs.iter().map(|r| r.all_acc).sum::<f64>() / runs.len().max(1) as f64,
        runs,
    }
}

#[derive(Debug, Serialize)]
pub struct CompareSummary {
    pub seeds: u64,
    pub component: Component,
    pub full: ArmSummary,
    pub ablated: ArmSummary,
    /// Mean novel accuracy with the component is at least that without it.
    pub full_novel_at_least_ablated: Option<bool>,
}

fn sweep(cfg: &RunConfig, train: &TrainConfig, seeds: u64) -> Result<Vec<parallel::SweepRun>, CliError> {
    Ok(parallel::with_pool(|| parallel::train_sweep(&cfg.data, train, seeds))?)
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    if a.seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let cfg = RunConfig::from_json(&formats::read_file(&a.config)?)?;
    let base = apply_ablation(&cfg.train, &a.ablate);

    if let Some(component) = a.compare {
        let mut ablated_set = a.ablate.clone();
        if !ablated_set.contains(&component) {
            ablated_set.push(component);
        }
        let ablated_cfg = apply_ablation(&cfg.train, &ablated_set);
        let full_runs = sweep(&cfg, &base, a.seeds)?;
        let abl_runs = sweep(&cfg, &ablated_cfg, a.seeds)?;
        let mut full = Vec::new();
        let mut abl = Vec::new();
        for run in &full_runs {
            full.push(write_run(
                &a.out_dir.join("full").join(format!("seed-{:03}", run.offset)),
                run,
                &cfg,
                &a.ablate,
                a.emit_plot_data,
            )?);
        }
        for run in &abl_runs {
            abl.push(write_run(
                &a.out_dir.join("ablated").join(format!("seed-{:03}", run.offset)),
                run,
                &cfg,
                &ablated_set,
                a.emit_plot_data,
            )?);
        }
        let full = summarize(a.ablate.clone(), full);
        let ablated = summarize(ablated_set, abl);
        let cmp = full.mean_novel_acc.zip(ablated.mean_novel_acc).map(|(f, b)| f >= b);
        let summary = CompareSummary { seeds: a.seeds, component, full, ablated, full_novel_at_least_ablated: cmp };
        return write(&a.out_dir.join("summary.json"), &to_json(&summary));
    }

    let runs = sweep(&cfg, &base, a.seeds)?;
    if a.seeds == 1 {
        write_run(&a.out_dir, &runs[0], &cfg, &a.ablate, a.emit_plot_data)?;
        return Ok(());
    }
    let mut metrics = Vec::new();
    for run in &runs {
        metrics.push(write_run(
            &a.out_dir.join(format!("seed-{:03}", run.offset)),
            run,
            &cfg,
            &a.ablate,
            a.emit_plot_data,
        )?);
    }
    write(&a.out_dir.join("summary.json"), &to_json(&summarize(a.ablate.clone(), metrics)))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<(), CliError> {
    let pred = formats::parse_labels(&formats::read_file(&a.pred)?)?;
    let truth = formats::parse_labels(&formats::read_file(&a.truth)?)?;
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch(pred.len(), truth.len())).map_err(|e| usage(e.to_string()));
    }
    let seen = formats::parse_index_list(&a.seen)?;
    let part = PartitionSpec::from_seen(a.k, seen, 0, truth.len().max(1)).map_err(|e| usage(e.to_string()))?;
    let report = eval::evaluate(&pred, &truth, &part).map_err(|e| match e {
        EvalError::IndexOutOfRange { .. } | EvalError::LengthMismatch(..) => usage(e.to_string()),
        e => CliError::Eval(e),
    })?;
    emit(a.out.as_deref(), &to_json(&report))
}

#[derive(Debug, Serialize)]
struct PartitionFile<'a> {
    k_total: usize,
    seen: &'a [usize],
    novel: &'a [usize],
    n_labeled: usize,
    n_unlabeled: usize,
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    let cfg = RunConfig::from_json(&formats::read_file(&a.config)?)?;
    let data = harness::generate_dataset(&cfg.data)?;
    write(&a.out_dir.join("features.csv"), &formats::write_features(&data.features))?;
    write(&a.out_dir.join("truth.txt"), &formats::write_labels(&data.truth))?;
    write(&a.out_dir.join("labeled.txt"), &formats::write_labels(data.labeled.labels()))?;
    let part = PartitionFile {
        k_total: data.k(),
        seen: data.partition.seen(),
        novel: data.partition.novel(),
        n_labeled: data.partition.n_labeled(),
        n_unlabeled: data.partition.n_unlabeled(),
    };
    write(&a.out_dir.join("partition.json"), &to_json(&part))
}
