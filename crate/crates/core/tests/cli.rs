use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

use wat_core::cli::{read_metrics, trace_rows};
use wat_core::data_io::{read_libsvm, split_and_shuffle};
use wat_core::driver::{run_wat_pseudo_passive, EnsembleSpec, RunConfig};
use wat_core::learners::LearnerConfig;

fn wat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wat")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Value {
    let out = wat(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap_or(Value::Null)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &TempDir, name: &str, dim: usize, n: usize, flip: f64, seed: u64) -> PathBuf {
    let p = dir.path().join(name);
    let (d, n, f, sd) = (dim.to_string(), n.to_string(), flip.to_string(), seed.to_string());
    ok(&["synth", "--dim", &d, "--n", &n, "--flip", &f, "--seed", &sd, "--out", s(&p)]);
    p
}

#[test]
fn synth_writes_lines_and_sidecar_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(&dir, "a.svm", 100, 20_000, 0.05, 7);
    let b = synth(&dir, "b.svm", 100, 20_000, 0.05, 7);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text.lines().count(), 20_000);
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let meta: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("a.svm.json")).unwrap()).unwrap();
    assert_eq!(meta["config"]["seed"], 7);
    assert_eq!(meta["config"]["dim"], 100);
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.svm");
    assert_eq!(wat(&["synth", "--dim", "10", "--n", "5", "--flip", "0.6", "--out", s(&out)]).status.code(), Some(2));
    let missing = wat(&["run", "--dataset", "/nonexistent/w8a.svm"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("not found"));
    let data = synth(&dir, "d.svm", 10, 200, 0.0, 1);
    assert_eq!(wat(&["run", "--dataset", s(&data), "--voting-zero"]).status.code(), Some(2));
    assert_eq!(wat(&["run", "--dataset", s(&data), "--wrs", "--movavg"]).status.code(), Some(2));
    assert_eq!(wat(&["run", "--dataset", s(&data), "--algo", "nope"]).status.code(), Some(2));
    assert_eq!(wat(&["run", "--dataset", s(&data), "--c-err", "-1"]).status.code(), Some(2));
    assert_eq!(wat(&["bogus"]).status.code(), Some(2));
    assert_eq!(wat(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.svm");
    std::fs::write(&bad, "+1 3:1 2:1\n").unwrap();
    assert_eq!(wat(&["run", "--dataset", s(&bad)]).status.code(), Some(1));
}

#[test]
fn run_writes_one_row_per_seed_checkpoint_and_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir, "d.svm", 100, 20_000, 0.05, 3);
    let csv = dir.path().join("m.csv");
    let summary = ok(&[
        "run", "--dataset", s(&data), "--algo", "pac", "--c-err", "1.0", "--wrs", "--k", "64", "--weighting", "standard",
        "--averaging", "simple", "--seeds", "1,2,3,4,5", "--checkpoints", "200", "--out", s(&csv),
    ]);
    // 14000 training examples, stride 70: 201 checkpoints, three model tags
    let rows = read_metrics(&csv).unwrap();
    assert_eq!(rows.len(), 5 * 201 * 3);
    for tag in ["base", "wrs", "oracle"] {
        assert_eq!(rows.iter().filter(|r| r.model == tag).count(), 5 * 201);
    }
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 5);
    assert!(summary["mean"]["rop_ensemble"].is_number());
    assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.test_acc) && (0.0..=1.0).contains(&r.sparsity)));
}

#[test]
fn sgdm_with_wrs_runs_the_pseudo_passive_loop() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir, "d.svm", 30, 2_000, 0.1, 4);
    let csv = dir.path().join("m.csv");
    ok(&["run", "--dataset", s(&data), "--algo", "sgdm", "--wrs", "--k", "8", "--seeds", "6", "--out", s(&csv)]);

    let ds = read_libsvm(&data, None).unwrap();
    let split = split_and_shuffle(&ds, 0.7, 6).unwrap();
    let cfg = RunConfig::new(LearnerConfig::sgdm_default(), EnsembleSpec::wrs(8), 6);
    let trace = run_wat_pseudo_passive(&cfg, &split.train, &split.test, ds.dim).unwrap();
    let expect: Vec<(u64, String, String)> = trace_rows(&trace)
        .into_iter()
        .map(|r| (r.timestep, r.model, format!("{:.6}", r.test_acc)))
        .collect();
    let got: Vec<(u64, String, String)> = read_metrics(&csv)
        .unwrap()
        .into_iter()
        .map(|r| (r.timestep, r.model, format!("{:.6}", r.test_acc)))
        .collect();
    assert_eq!(got, expect);
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir, "d.svm", 20, 1_000, 0.1, 5);
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, format!(r#"{{"dataset": "{}", "wrs": true, "k": 2, "seeds": [1, 2]}}"#, s(&data))).unwrap();
    let summary = ok(&["run", "--config", s(&cfg), "--k", "5"]);
    assert_eq!(summary["ensemble"]["k"], 5);
    assert_eq!(summary["seeds"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_grid_sizes_and_single_cell() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir, "d.svm", 10, 300, 0.1, 8);
    let pac = ok(&["sweep", "--dataset", s(&data), "--algo", "pac", "--seeds", "1", "--checkpoints", "10"]);
    assert_eq!(pac["cells"], 7);
    let cells = dir.path().join("cells.csv");
    let fsol = ok(&["sweep", "--dataset", s(&data), "--algo", "fsol", "--seeds", "1", "--checkpoints", "10", "--out", s(&cells)]);
    assert_eq!(fsol["cells"], 104);
    assert_eq!(std::fs::read_to_string(&cells).unwrap().lines().count(), 105);
    let single = ok(&["sweep", "--dataset", s(&data), "--algo", "pac", "--c-grid", "0.5", "--seeds", "1,2"]);
    assert_eq!(single["cells"], 1);
    assert_eq!(single["selected"], 0);
    assert_eq!(single["selected_config"]["c_err"], 0.5);
}

#[test]
fn compare_counts_wins_and_rejects_mismatched_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for i in 0..16u64 {
        let data = synth(&dir, &format!("d{i}.svm"), 50, 5_000, 0.1, 100 + i);
        let csv = dir.path().join(format!("m{i}.csv"));
        ok(&["run", "--dataset", s(&data), "--wrs", "--k", "64", "--seeds", "1,2,3", "--out", s(&csv)]);
        files.push(csv);
    }
    let mut args = vec!["compare"];
    args.extend(files.iter().map(|p| s(p)));
    let cmp = ok(&args);
    assert_eq!(cmp["datasets"], 16);
    assert_eq!(cmp["wins"], 16);
    assert!(cmp["wilcoxon"]["p_value"].as_f64().unwrap() < 0.001);

    let same = ok(&["compare", s(&files[0]), s(&files[0]), "--treatment", "base"]);
    assert_eq!(same["wins"], 0);
    assert_eq!(same["ties"], 2);
    assert_eq!(same["wilcoxon"]["degenerate"], true);

    let data = dir.path().join("d0.svm");
    let other = dir.path().join("other.csv");
    ok(&["run", "--dataset", s(&data), "--wrs", "--seeds", "7,8,9", "--out", s(&other)]);
    let out = wat(&["compare", s(&files[0]), s(&other)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("different seeds"));
}

#[test]
fn stats_reports_dimension_and_sparsity() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth(&dir, "d.svm", 100, 500, 0.0, 2);
    let stats = ok(&["stats", "--dataset", s(&data)]);
    assert_eq!(stats["n_examples"], 500);
    assert_eq!(stats["dim"], 100);
    assert!((stats["sparsity"].as_f64().unwrap() - 0.9).abs() < 1e-12);
    let wide = ok(&["stats", "--dataset", s(&data), "--dim", "200"]);
    assert!((wide["sparsity"].as_f64().unwrap() - 0.95).abs() < 1e-12);
}
