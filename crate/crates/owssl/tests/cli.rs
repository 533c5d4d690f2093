//! End-to-end checks of the `owssl` binary: exit codes, determinism and
//! committed golden outputs. Set `OWSSL_BLESS=1` to rewrite the goldens.

// Reference values are kept at the precision they were computed with.
#![allow(clippy::excessive_precision)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use owssl::formats;

const BIN: &str = env!("CARGO_BIN_EXE_owssl");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn owssl(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn owssl_threads(args: &[&str], threads: &str) -> Output {
    Command::new(BIN).env("OWSSL_THREADS", threads).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Drops the wall-clock line from theory output.
fn strip_elapsed(json: &str) -> String {
    json.lines().filter(|l| !l.trim_start().starts_with("\"elapsed_seconds\"")).collect::<Vec<_>>().join("\n")
}

fn check_golden(name: &str, actual: &str) {
    let path = golden_dir().join(name);
    if std::env::var_os("OWSSL_BLESS").is_some() {
        fs::create_dir_all(golden_dir()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(expected == actual, "{name} differs from its golden file");
}

fn theory_args(out: &Path) -> Vec<String> {
    [
        "theory",
        "--prior-labeled",
        "0.5,0.5",
        "--prior-unlabeled",
        "0.5,0.5",
        "--n-labeled",
        "20",
        "--n-unlabeled",
        "100",
        "--trials",
        "10000",
        "--seed",
        "7",
        "--out",
        p(out),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run_strs(args: &[String]) -> Output {
    owssl(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn solve_fixture_matches_golden_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.csv");
    let report = dir.path().join("report.json");
    let out = owssl(&[
        "solve",
        "--probs",
        p(&fixture("fixture_probs.csv")),
        "--prior",
        p(&fixture("uniform_prior2.csv")),
        "--labels",
        p(&fixture("fixture_labels.txt")),
        "--max-iters",
        "10000",
        "--out",
        p(&q),
        "--report",
        p(&report),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(&q).unwrap();
    check_golden("solve_fixture.csv", &text);
    check_golden("solve_fixture_report.json", &fs::read_to_string(&report).unwrap());

    // Reference values from a 25-digit evaluation of the reduced problem.
    let m = formats::parse_matrix(&text).unwrap();
    let expected = [
        [1.0, 0.4999999999999997264888772, 2.73511122779124964829546e-16],
        [0.0, 0.5000000000000002735111228, 0.9999999999999997264888772],
    ];
    for (i, row) in expected.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            assert!((m.get(i, j) - e).abs() < 1e-8, "q[{i},{j}]");
        }
    }
}

#[test]
fn solve_uniform_gives_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let probs = dir.path().join("p.csv");
    fs::write(&probs, "# k=2 n=4 layout=class-rows\n0.5,0.5,0.5,0.5\n0.5,0.5,0.5,0.5\n").unwrap();
    let q = dir.path().join("q.csv");
    let out = owssl(&["solve", "--probs", p(&probs), "--prior", p(&fixture("uniform_prior2.csv")), "--out", p(&q)]);
    assert_eq!(code(&out), 0);
    let m = formats::parse_matrix(&fs::read_to_string(&q).unwrap()).unwrap();
    assert!(m.as_col_major().iter().all(|&v| (v - 0.5).abs() < 1e-12));
}

#[test]
fn solve_usage_and_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let q = dir.path().join("q.csv");
    let probs = fixture("fixture_probs.csv");
    let prior = fixture("uniform_prior2.csv");
    let out = owssl(&["solve", "--probs", p(&probs), "--prior", p(&prior), "--conditional", "--out", p(&q)]);
    assert_eq!(code(&out), 2);

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "# k=2 n=2 layout=class-rows\n0.5,zz\n0.5,0.5\n").unwrap();
    let out = owssl(&["solve", "--probs", p(&bad), "--prior", p(&prior), "--out", p(&q)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));

    let prior3 = dir.path().join("prior3.csv");
    fs::write(&prior3, "# k=3 n=1 layout=class-rows\n0.2\n0.3\n0.5\n").unwrap();
    let out = owssl(&["solve", "--probs", p(&probs), "--prior", p(&prior3), "--out", p(&q)]);
    assert_eq!(code(&out), 2);

    let missing = dir.path().join("nope.csv");
    let out = owssl(&["solve", "--probs", p(&missing), "--prior", p(&prior), "--out", p(&q)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn solve_degenerate_prior_is_a_computation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let prior = dir.path().join("prior.csv");
    fs::write(&prior, "# k=2 n=1 layout=class-rows\n1.0\n0.0\n").unwrap();
    let q = dir.path().join("q.csv");
    let out = owssl(&["solve", "--probs", p(&fixture("fixture_probs.csv")), "--prior", p(&prior), "--out", p(&q)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn eval_fixture_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("eval.json");
    let out = owssl(&[
        "eval",
        "--pred",
        p(&fixture("six_pred.txt")),
        "--truth",
        p(&fixture("six_truth.txt")),
        "--k",
        "2",
        "--seen",
        "",
        "--out",
        p(&out_path),
    ]);
    assert_eq!(code(&out), 0);
    let text = fs::read_to_string(&out_path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!((v["novel"].as_f64().unwrap() - 5.0 / 6.0).abs() < 1e-12);
    check_golden("eval_six.json", &text);
}

#[test]
fn eval_identity_and_length_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let truth = fixture("six_truth.txt");
    let out = owssl(&["eval", "--pred", p(&truth), "--truth", p(&truth), "--k", "2", "--seen", "0"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["seen", "novel", "all"] {
        assert_eq!(v[key].as_f64(), Some(1.0), "{key}");
    }
    let short = dir.path().join("short.txt");
    fs::write(&short, formats::write_labels(&[0, 1])).unwrap();
    let out = owssl(&["eval", "--pred", p(&short), "--truth", p(&truth), "--k", "2", "--seen", "0"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn theory_matches_golden_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let args_a = theory_args(&a);
    let args_b = theory_args(&b);
    let ra = Command::new(BIN).env("OWSSL_THREADS", "1").args(&args_a).output().unwrap();
    let rb = Command::new(BIN).env("OWSSL_THREADS", "4").args(&args_b).output().unwrap();
    assert_eq!(code(&ra), 0);
    assert_eq!(code(&rb), 0);
    let ta = strip_elapsed(&fs::read_to_string(&a).unwrap());
    let tb = strip_elapsed(&fs::read_to_string(&b).unwrap());
    assert_eq!(ta, tb);
    check_golden("theory_k2.json", &ta);
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(v["ecs_con_closed"].as_f64(), Some(0.2));
    assert_eq!(v["ecs_uncon_closed"].as_f64(), Some(0.0));
    assert!(v["elapsed_seconds"].as_f64().unwrap() >= 0.0);
}

#[test]
fn theory_rejects_inconsistent_spec() {
    let out = owssl(&[
        "theory",
        "--prior-labeled",
        "0.5,0.5",
        "--prior-unlabeled",
        "0.5,0.5",
        "--n-labeled",
        "20",
        "--n-unlabeled",
        "100",
        "--prior",
        "0.9,0.1",
        "--trials",
        "10",
    ]);
    assert_eq!(code(&out), 2);
    let out = owssl(&[
        "theory",
        "--prior-labeled",
        "0.5,0.5",
        "--prior-unlabeled",
        "0.5,0.5",
        "--n-labeled",
        "20",
        "--n-unlabeled",
        "100",
        "--trials",
        "0",
    ]);
    assert_eq!(code(&out), 2);
}

fn run_dir_files(dir: &Path, names: &[&str]) -> Vec<(String, String)> {
    names.iter().map(|n| (n.to_string(), fs::read_to_string(dir.join(n)).unwrap())).collect()
}

#[test]
fn train_matches_golden_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let names = ["runlog.jsonl", "bias.csv", "metrics.json", "plot.csv"];
    let mut outputs = Vec::new();
    for (sub, threads) in [("a", "1"), ("b", "3")] {
        let out_dir = dir.path().join(sub);
        let out = owssl_threads(
            &["train", "--config", p(&fixture("small_run.json")), "--out-dir", p(&out_dir), "--emit-plot-data"],
            threads,
        );
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(run_dir_files(&out_dir, &names));
    }
    assert_eq!(outputs[0], outputs[1]);
    for (name, text) in &outputs[0] {
        check_golden(&format!("train_small_{name}"), text);
    }
}

#[test]
fn train_zero_epochs_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"schema_version":1,"data":{"k_total":4,"feature_dim":4,"samples_per_class":10},"train":{"epochs":0,"batch_size":8,"queue_capacity":32}}"#).unwrap();
    let out_dir = dir.path().join("run");
    let out = owssl(&["train", "--config", p(&cfg), "--out-dir", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(out_dir.join("runlog.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(log.contains("\"kind\":\"runlog\""));
}

#[test]
fn train_sweep_and_compare_write_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("cmp");
    let out = owssl(&[
        "train",
        "--config",
        p(&fixture("small_run.json")),
        "--out-dir",
        p(&out_dir),
        "--seeds",
        "2",
        "--compare",
        "conditional",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(v["full"]["runs"].as_array().unwrap().len(), 2);
    assert_eq!(v["ablated"]["ablate"][0], "conditional");
    assert!(out_dir.join("full/seed-001/runlog.jsonl").exists());
    assert!(out_dir.join("ablated/seed-000/metrics.json").exists());

    let sweep_dir = dir.path().join("sweep");
    let out = owssl(&[
        "train",
        "--config",
        p(&fixture("small_run.json")),
        "--out-dir",
        p(&sweep_dir),
        "--seeds",
        "2",
        "--ablate",
        "owht,multiview",
    ]);
    assert_eq!(code(&out), 0);
    assert!(sweep_dir.join("summary.json").exists());
    assert!(sweep_dir.join("seed-001/bias.csv").exists());
}

#[test]
fn train_config_errors_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    for body in [
        r#"{"schema_version":2}"#,
        r#"{"schema_version":1,"train":{"bogus":1}}"#,
        r#"{"schema_version":1,"train":{"batch_size":0}}"#,
        r#"{"schema_version":1,"data":{"k_total":40,"feature_dim":4}}"#,
        "not json",
    ] {
        fs::write(&cfg, body).unwrap();
        let out = owssl(&["train", "--config", p(&cfg), "--out-dir", p(&dir.path().join("o"))]);
        assert_eq!(code(&out), 2, "{body}");
    }
}

#[test]
fn gen_data_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = owssl(&["gen-data", "--config", p(&fixture("small_run.json")), "--out-dir", p(dir.path())]);
    assert_eq!(code(&out), 0);
    for name in ["features.csv", "truth.txt", "labeled.txt", "partition.json"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        check_golden(&format!("gen_small_{name}"), &text);
    }
    let x = formats::parse_features(&fs::read_to_string(dir.path().join("features.csv")).unwrap()).unwrap();
    assert_eq!((x.m(), x.d()), (80, 4));
}

#[test]
fn help_and_version_exit_zero_and_unknown_flags_exit_two() {
    assert_eq!(code(&owssl(&["--help"])), 0);
    assert_eq!(code(&owssl(&["--version"])), 0);
    assert_eq!(code(&owssl(&["solve", "--what"])), 2);
    assert_eq!(code(&owssl(&[])), 2);
    assert_eq!(code(&run_strs(&["eval".into()])), 2);
}
