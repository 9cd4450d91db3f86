//! Command implementations behind the `filfl` binary.
//!
//! Exit-code contract: 0 on success, 2 when the config fails to parse or
//! validate, 1 when the run itself fails.

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use filfl_core::config::{ExperimentConfig, FilterModeConfig};
use filfl_core::orchestrator::{run_experiment, RunOutput};
use filfl_core::report;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 1;

/// A command failure carrying the process exit code.
#[derive(Debug)]
pub struct CmdError {
    pub code: i32,
    pub message: String,
}

impl std::fmt::Display for CmdError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

fn config_err(message: impl Into<String>) -> CmdError {
    CmdError {
        code: EXIT_CONFIG,
        message: message.into(),
    }
}

fn runtime_err(message: impl Into<String>) -> CmdError {
    CmdError {
        code: EXIT_RUNTIME,
        message: message.into(),
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Load, validate, and apply the optional seed override.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CmdError> {
    let mut cfg = ExperimentConfig::from_file(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<(), CmdError> {
    std::fs::write(path, contents).map_err(|e| runtime_err(format!("{}: {e}", path.display())))
}

/// `filfl run`: one experiment, outputs per-round CSV, JSON summary, filter
/// trace, and optional plots.
pub fn cmd_run(config_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<(), CmdError> {
    let cfg = load_config(config_path, seed)?;
    let started = now_ms();
    let out = run_experiment(&cfg).map_err(|e| runtime_err(e.to_string()))?;
    let written = report::write_run_outputs(out_dir, &cfg, &out, started)
        .map_err(|e| runtime_err(e.to_string()))?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// `filfl filter-bench`: run both filter modes against the exhaustive
/// optimum each filtering round and report approximation ratios.
pub fn cmd_filter_bench(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<(), CmdError> {
    let mut cfg = load_config(config_path, seed)?;
    if cfg.availability.available > filfl_core::filtering::BRUTE_FORCE_LIMIT {
        return Err(config_err(format!(
            "availability.available = {} exceeds the exhaustive-search limit of {}",
            cfg.availability.available,
            filfl_core::filtering::BRUTE_FORCE_LIMIT
        )));
    }
    cfg.diagnostics.opt_ratio = true;

    let mut run_mode = |mode: FilterModeConfig| -> Result<RunOutput, CmdError> {
        let mut cfg = cfg.clone();
        cfg.filter.mode = mode;
        run_experiment(&cfg).map_err(|e| runtime_err(e.to_string()))
    };
    let dgf = run_mode(FilterModeConfig::D)?;
    let rgf = run_mode(FilterModeConfig::R)?;

    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for (a, b) in dgf.records.iter().zip(&rgf.records) {
        if let (Some(rd), Some(rr)) = (a.opt_ratio, b.opt_ratio) {
            rows.push((a.round, rd, rr));
        }
    }
    if rows.is_empty() {
        return Err(runtime_err("no filtering rounds were triggered"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| runtime_err(e.to_string()))?;
    let csv_path = out_dir.join("ratio.csv");
    write(&csv_path, &report::ratio_csv(&rows))?;

    let stats = |pick: fn(&(usize, f64, f64)) -> f64| -> (f64, f64) {
        let values: Vec<f64> = rows.iter().map(pick).collect();
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        (mean, min)
    };
    let (mean_d, min_d) = stats(|r| r.1);
    let (mean_r, min_r) = stats(|r| r.2);
    let summary = serde_json::json!({
        "filter_rounds": rows.len(),
        "dgf": {"mean_ratio": mean_d, "min_ratio": min_d},
        "rgf": {"mean_ratio": mean_r, "min_ratio": min_r},
    });
    write(
        &out_dir.join("bench_summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    println!("wrote {}", csv_path.display());
    println!("dgf mean ratio {mean_d:.6} (min {min_d:.6}) over {} rounds", rows.len());
    println!("rgf mean ratio {mean_r:.6} (min {min_r:.6}) over {} rounds", rows.len());
    Ok(())
}

/// `filfl submod-check`: per-round weak-submodularity table plus the
/// averaged row.
pub fn cmd_submod_check(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<(), CmdError> {
    let mut cfg = load_config(config_path, seed)?;
    if cfg.submod.samples < 50 {
        return Err(config_err("submod.samples must be >= 50"));
    }
    cfg.diagnostics.submod_check = true;
    let out = run_experiment(&cfg).map_err(|e| runtime_err(e.to_string()))?;
    if out.submod_rounds.is_empty() {
        return Err(runtime_err(
            "no filtering rounds were triggered; nothing to measure",
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| runtime_err(e.to_string()))?;
    let csv = report::submod_csv(&out.submod_rounds);
    let path = out_dir.join("submod.csv");
    write(&path, &csv)?;
    println!("wrote {}", path.display());
    print!("{csv}");
    Ok(())
}

/// `filfl partition-inspect`: per-client class histograms and the mean
/// max-class fraction of the configured task.
pub fn cmd_partition_inspect(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
) -> Result<(), CmdError> {
    let cfg = load_config(config_path, seed)?;
    let (spec, task) =
        filfl_core::config::build_task(&cfg).map_err(|e| runtime_err(e.to_string()))?;
    if !spec.is_classification() {
        return Err(config_err(
            "partition-inspect needs a classification task (class labels)",
        ));
    }
    let (csv, mean_max_fraction) = report::partition_csv(&task);
    std::fs::create_dir_all(out_dir).map_err(|e| runtime_err(e.to_string()))?;
    let path = out_dir.join("partition.csv");
    write(&path, &csv)?;
    let summary = serde_json::json!({
        "clients": task.clients().len(),
        "non_empty_clients": task.clients().values().filter(|d| !d.is_empty()).count(),
        "mean_max_class_fraction": mean_max_fraction,
    });
    write(
        &out_dir.join("inspect_summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    println!("wrote {}", path.display());
    println!("mean max-class fraction: {mean_max_fraction:.4}");
    Ok(())
}

