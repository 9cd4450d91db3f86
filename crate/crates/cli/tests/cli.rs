//! End-to-end tests of the `filfl` binary: output shapes, exit codes, and
//! the byte-level determinism contract.

use std::path::Path;
use std::process::{Command, Output};

fn filfl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_filfl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn base_config(rounds: usize, mode: &str, parallel: bool) -> String {
    format!(
        r#"{{
            "seed": 17,
            "rounds": {rounds},
            "parallel": {parallel},
            "model": {{"kind": "logistic_regression", "input_dim": 3, "classes": 3, "l2": 0.2}},
            "task": {{"kind": "synthetic", "clients": 12, "per_client": 30,
                     "heterogeneity": 0.8, "public_size": 24, "test_size": 60}},
            "availability": {{"available": 8, "resample_period": 4}},
            "filter": {{"mode": "{mode}", "period": 2}},
            "selection": {{"kind": "rs_weighted", "k": 3}},
            "local": {{"epochs": 1, "batch_size": 10, "learning_rate": 0.1}}
        }}"#
    )
}

#[test]
fn run_writes_csv_with_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", &base_config(6, "r", false));
    let out = dir.path().join("out");
    let result = filfl(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "{result:?}");
    let csv = std::fs::read_to_string(out.join("run.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 7);
    assert_eq!(
        lines[0],
        "round,n_t,filtered_size,selected_ids,train_loss,public_loss,test_loss,test_acc,reward,delta_gap,opt_ratio,oracle_calls,wall_ms"
    );
    assert!(out.join("summary.json").exists());
    assert!(out.join("filter_trace.jsonl").exists());
}

#[test]
fn identical_seeds_give_byte_identical_outputs_with_parallel_training() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", &base_config(8, "r", true));
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    for out in [&out_a, &out_b] {
        let result = filfl(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
        assert!(result.status.success(), "{result:?}");
    }
    let csv_a = std::fs::read(out_a.join("run.csv")).unwrap();
    let csv_b = std::fs::read(out_b.join("run.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
    let trace_a = std::fs::read(out_a.join("filter_trace.jsonl")).unwrap();
    let trace_b = std::fs::read(out_b.join("filter_trace.jsonl")).unwrap();
    assert_eq!(trace_a, trace_b);
}

#[test]
fn seed_override_changes_the_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", &base_config(4, "r", false));
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    let base = filfl(&["run", "--config", &config, "--out", out_a.to_str().unwrap()]);
    assert!(base.status.success());
    let other = filfl(&[
        "run",
        "--config",
        &config,
        "--out",
        out_b.to_str().unwrap(),
        "--seed",
        "99",
    ]);
    assert!(other.status.success());
    let csv_a = std::fs::read(out_a.join("run.csv")).unwrap();
    let csv_b = std::fs::read(out_b.join("run.csv")).unwrap();
    assert_ne!(csv_a, csv_b);
}

#[test]
fn filter_off_and_on_differ_only_in_filter_columns_before_first_trigger() {
    let dir = tempfile::tempdir().unwrap();
    let off = write_config(dir.path(), "off.json", &base_config(8, "off", false));
    let on = write_config(dir.path(), "on.json", &base_config(8, "r", false));
    let out_off = dir.path().join("off");
    let out_on = dir.path().join("on");
    assert!(filfl(&["run", "--config", &off, "--out", out_off.to_str().unwrap()])
        .status
        .success());
    assert!(filfl(&["run", "--config", &on, "--out", out_on.to_str().unwrap()])
        .status
        .success());
    let csv_off = std::fs::read_to_string(out_off.join("run.csv")).unwrap();
    let csv_on = std::fs::read_to_string(out_on.join("run.csv")).unwrap();
    // Round 1 never triggers the filter (the initial pool is used verbatim),
    // so the first data row is identical; rows after the first trigger
    // diverge in the filtering-dependent columns.
    let first_off = csv_off.lines().nth(1).unwrap();
    let first_on = csv_on.lines().nth(1).unwrap();
    assert_eq!(first_off, first_on);
    assert_ne!(csv_off, csv_on);
}

#[test]
fn invalid_config_exits_2_with_field_message() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.json",
        &base_config(4, "r", false).replace(r#""k": 3"#, r#""k": 0"#),
    );
    let out = dir.path().join("out");
    let result = filfl(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("selection.k"), "{stderr}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "bad.json",
        &base_config(4, "r", false).replace(r#""seed": 17"#, r#""seed": 17, "sed": 1"#),
    );
    let out = dir.path().join("out");
    let result = filfl(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn filter_bench_emits_two_ratio_columns() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "cfg.json",
        &base_config(6, "r", false).replace(r#""available": 8"#, r#""available": 6"#),
    );
    let out = dir.path().join("bench");
    let result = filfl(&[
        "filter-bench",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{result:?}");
    let csv = std::fs::read_to_string(out.join("ratio.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "round,ratio_dgf,ratio_rgf");
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 3);
        let d: f64 = fields[1].parse().unwrap();
        let r: f64 = fields[2].parse().unwrap();
        assert!(d <= 1.0 + 1e-12 && r <= 1.0 + 1e-12);
    }
    assert!(out.join("bench_summary.json").exists());
}

#[test]
fn filter_bench_single_client_pool_has_ratio_one() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "cfg.json",
        &base_config(5, "r", false).replace(r#""available": 8"#, r#""available": 1"#),
    );
    let out = dir.path().join("bench");
    let result = filfl(&[
        "filter-bench",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{result:?}");
    let csv = std::fs::read_to_string(out.join("ratio.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[1].parse::<f64>().unwrap(), 1.0);
        assert_eq!(fields[2].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn filter_bench_rejects_large_pools() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "cfg.json",
        &base_config(4, "r", false)
            .replace(r#""available": 8"#, r#""available": 25"#)
            .replace(r#""clients": 12"#, r#""clients": 30"#),
    );
    let out = dir.path().join("bench");
    let result = filfl(&[
        "filter-bench",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn submod_check_emits_table_rows_in_range() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "cfg.json",
        &base_config(4, "r", false).replace(
            r#""local""#,
            r#""submod": {"samples": 60}, "local""#,
        ),
    );
    let out = dir.path().join("submod");
    let result = filfl(&[
        "submod-check",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{result:?}");
    let csv = std::fs::read_to_string(out.join("submod.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "round,0.001,0.2,0.4,0.6,0.8,1");
    assert!(lines.last().unwrap().starts_with("average,"));
    for line in &lines[1..] {
        for field in line.split(',').skip(1) {
            let pct: f64 = field.parse().unwrap();
            assert!((0.0..=100.0).contains(&pct));
        }
    }
    // The averaged row is the arithmetic mean of the round rows.
    let parse_row = |line: &str| -> Vec<f64> {
        line.split(',').skip(1).map(|f| f.parse().unwrap()).collect()
    };
    let rounds: Vec<Vec<f64>> = lines[1..lines.len() - 1].iter().map(|l| parse_row(l)).collect();
    let avg = parse_row(lines.last().unwrap());
    for col in 0..avg.len() {
        let mean: f64 =
            rounds.iter().map(|r| r[col]).sum::<f64>() / rounds.len() as f64;
        assert!((avg[col] - mean).abs() < 1e-9);
    }
}

#[test]
fn partition_inspect_reports_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "cfg.json",
        r#"{
            "seed": 5,
            "rounds": 1,
            "model": {"kind": "logistic_regression", "input_dim": 2, "classes": 4, "l2": 0.1},
            "task": {"kind": "dirichlet_synthetic", "clients": 6, "total_examples": 600,
                     "alpha": 0.3, "test_size": 50,
                     "public": {"mode": "held_out_global", "fraction": 0.05}},
            "availability": {"available": 6, "resample_period": 1},
            "filter": {"mode": "d", "period": 1},
            "selection": {"kind": "rs_uniform", "k": 2},
            "local": {"epochs": 1, "batch_size": 16, "learning_rate": 0.05}
        }"#,
    );
    let out = dir.path().join("inspect");
    let result = filfl(&[
        "partition-inspect",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{result:?}");
    let csv = std::fs::read_to_string(out.join("partition.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "client_id,size,max_class_fraction,count_0,count_1,count_2,count_3");
    // One row per non-empty client.
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("inspect_summary.json")).unwrap())
            .unwrap();
    let non_empty = summary["non_empty_clients"].as_u64().unwrap() as usize;
    assert_eq!(lines.len() - 1, non_empty);
}

#[test]
fn partition_inspect_rejects_regression_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", &base_config(2, "off", false).replace(
        r#""kind": "logistic_regression", "input_dim": 3, "classes": 3"#,
        r#""kind": "linear_regression", "input_dim": 3"#,
    ));
    let out = dir.path().join("inspect");
    let result = filfl(&[
        "partition-inspect",
        "--config",
        &config,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn plots_are_emitted_when_enabled() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "cfg.json",
        &base_config(4, "r", false).replace(
            r#""local""#,
            r#""diagnostics": {"plots": true}, "local""#,
        ),
    );
    let out = dir.path().join("out");
    let result = filfl(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
    assert!(result.status.success(), "{result:?}");
    for name in ["train_loss.svg", "test_loss.svg", "filtered_size.svg", "test_accuracy.svg"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}
