//! Metrics persistence: the per-round CSV (the contract), the JSON summary
//! with its run manifest, the JSONL filter trace, and best-effort SVG line
//! plots rendered without any external dependency.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::data::FederatedTask;
use crate::dataset::Label;
use crate::error::Result;
use crate::orchestrator::{FilterRow, RoundRecord, RunOutput, SubmodRound};

/// Fixed column set of the per-round CSV. Tests assert header equality;
/// changing this is a breaking change to the output contract.
pub const RUN_CSV_HEADER: &str = "round,n_t,filtered_size,selected_ids,train_loss,public_loss,test_loss,test_acc,reward,delta_gap,opt_ratio,oracle_calls,wall_ms";

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Render the per-round CSV (header plus one row per round). Disabled
/// diagnostics render as empty strings.
pub fn round_csv(records: &[RoundRecord]) -> String {
    let mut out = String::from(RUN_CSV_HEADER);
    out.push('\n');
    for r in records {
        let selected = r
            .selected
            .iter()
            .map(|id| id.to_string())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.round,
            r.available.len(),
            r.filtered.len(),
            selected,
            fmt_f64(r.train_loss),
            fmt_f64(r.public_loss),
            fmt_f64(r.test_loss),
            fmt_opt(r.test_acc),
            fmt_f64(r.reward),
            fmt_opt(r.delta_gap),
            fmt_opt(r.opt_ratio),
            r.oracle_calls,
            fmt_opt(r.wall_ms),
        ));
    }
    out
}

/// One JSON object per filter decision.
pub fn filter_trace_jsonl(rows: &[FilterRow]) -> String {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("trace row serializes"));
        out.push('\n');
    }
    out
}

/// SHA-256 of the canonical (sorted-key) JSON encoding, so the hash is
/// stable under key reordering in the source file.
pub fn config_hash(config_json: &str) -> Result<String> {
    let value: serde_json::Value = serde_json::from_str(config_json)?;
    let canonical = serde_json::to_string(&value)?;
    let digest = Sha256::digest(canonical.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, serde::Serialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub artifact_version: &'static str,
    pub outputs: Vec<String>,
}

fn now_unix_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

/// Write run.csv, summary.json, filter_trace.jsonl, and (optionally) the
/// SVG panels into `dir`. Returns the paths written.
pub fn write_run_outputs(
    dir: &Path,
    cfg: &ExperimentConfig,
    out: &RunOutput,
    started_unix_ms: u128,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();

    let csv_path = dir.join("run.csv");
    std::fs::write(&csv_path, round_csv(&out.records))?;
    written.push(csv_path);

    let trace_path = dir.join("filter_trace.jsonl");
    std::fs::write(&trace_path, filter_trace_jsonl(&out.filter_rows))?;
    written.push(trace_path);

    if cfg.diagnostics.plots {
        for path in write_plots(dir, out)? {
            written.push(path);
        }
    }

    let manifest = RunManifest {
        config_hash: config_hash(&cfg.to_json())?,
        seed: cfg.seed,
        started_unix_ms,
        finished_unix_ms: now_unix_ms(),
        artifact_version: env!("CARGO_PKG_VERSION"),
        outputs: written
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect(),
    };
    let summary = summary_json(cfg, out, &manifest);
    let summary_path = dir.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    written.push(summary_path);
    Ok(written)
}

/// Aggregate metrics plus the manifest.
pub fn summary_json(
    cfg: &ExperimentConfig,
    out: &RunOutput,
    manifest: &RunManifest,
) -> serde_json::Value {
    let last = out.records.last();
    let mean = |f: fn(&RoundRecord) -> f64| -> Option<f64> {
        if out.records.is_empty() {
            None
        } else {
            Some(out.records.iter().map(f).sum::<f64>() / out.records.len() as f64)
        }
    };
    let ratios: Vec<f64> = out.records.iter().filter_map(|r| r.opt_ratio).collect();
    serde_json::json!({
        "manifest": manifest,
        "rounds": cfg.rounds,
        "final": last.map(|r| serde_json::json!({
            "train_loss": r.train_loss,
            "public_loss": r.public_loss,
            "test_loss": r.test_loss,
            "test_acc": r.test_acc,
        })),
        "mean_filtered_size": mean(|r| r.filtered.len() as f64),
        "total_oracle_calls": out.records.iter().map(|r| r.oracle_calls).sum::<u64>(),
        "refilter_rounds": out.records.iter().filter(|r| r.refiltered).count(),
        "mean_opt_ratio": if ratios.is_empty() { None } else {
            Some(ratios.iter().sum::<f64>() / ratios.len() as f64)
        },
    })
}

/// CSV of the weak-submodularity table: one row per measured round plus an
/// arithmetic-mean row, one column per gamma.
pub fn submod_csv(rounds: &[SubmodRound]) -> String {
    let mut out = String::from("round");
    if let Some(first) = rounds.first() {
        for g in &first.table.gammas {
            out.push(',');
            out.push_str(&fmt_f64(*g));
        }
    }
    out.push('\n');
    for entry in rounds {
        out.push_str(&entry.round.to_string());
        for pct in &entry.table.verified_pct {
            out.push(',');
            out.push_str(&fmt_f64(*pct));
        }
        out.push('\n');
    }
    if let Some(first) = rounds.first() {
        out.push_str("average");
        for col in 0..first.table.gammas.len() {
            let mean = rounds
                .iter()
                .map(|r| r.table.verified_pct[col])
                .sum::<f64>()
                / rounds.len() as f64;
            out.push(',');
            out.push_str(&fmt_f64(mean));
        }
        out.push('\n');
    }
    out
}

/// CSV of per-round approximation ratios for the two filter modes.
pub fn ratio_csv(rounds: &[(usize, f64, f64)]) -> String {
    let mut out = String::from("round,ratio_dgf,ratio_rgf\n");
    for (round, d, r) in rounds {
        out.push_str(&format!("{round},{},{}\n", fmt_f64(*d), fmt_f64(*r)));
    }
    out
}

/// Per-client class histograms: `client_id,size,max_class_fraction,count_c...`
/// for every non-empty client. Returns the CSV and the mean max-class
/// fraction across non-empty clients.
pub fn partition_csv(task: &FederatedTask) -> (String, f64) {
    let classes = task
        .clients()
        .values()
        .map(|d| d.class_count())
        .max()
        .unwrap_or(0);
    let mut out = String::from("client_id,size,max_class_fraction");
    for c in 0..classes {
        out.push_str(&format!(",count_{c}"));
    }
    out.push('\n');
    let mut fractions = Vec::new();
    for (id, data) in task.clients() {
        if data.is_empty() {
            continue;
        }
        let mut hist = vec![0usize; classes];
        for example in data.examples() {
            if let Label::Class(c) = example.label {
                hist[c] += 1;
            }
        }
        let max_fraction = hist.iter().max().copied().unwrap_or(0) as f64 / data.len() as f64;
        fractions.push(max_fraction);
        out.push_str(&format!("{id},{},{}", data.len(), fmt_f64(max_fraction)));
        for count in &hist {
            out.push_str(&format!(",{count}"));
        }
        out.push('\n');
    }
    let mean = if fractions.is_empty() {
        0.0
    } else {
        fractions.iter().sum::<f64>() / fractions.len() as f64
    };
    (out, mean)
}

fn write_plots(dir: &Path, out: &RunOutput) -> Result<Vec<PathBuf>> {
    let rounds: Vec<f64> = out.records.iter().map(|r| r.round as f64).collect();
    let mut written = Vec::new();
    let mut emit = |name: &str, title: &str, values: Vec<f64>| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, svg_line_chart(title, "round", &rounds, &values))?;
        written.push(path);
        Ok(())
    };
    emit(
        "train_loss.svg",
        "training loss",
        out.records.iter().map(|r| r.train_loss).collect(),
    )?;
    emit(
        "test_loss.svg",
        "test loss",
        out.records.iter().map(|r| r.test_loss).collect(),
    )?;
    emit(
        "filtered_size.svg",
        "filtered-in clients",
        out.records.iter().map(|r| r.filtered.len() as f64).collect(),
    )?;
    if out.records.iter().all(|r| r.test_acc.is_some()) {
        emit(
            "test_accuracy.svg",
            "test accuracy",
            out.records.iter().map(|r| r.test_acc.unwrap()).collect(),
        )?;
    }
    Ok(written)
}

/// Minimal self-contained SVG line chart.
pub fn svg_line_chart(title: &str, x_label: &str, xs: &[f64], ys: &[f64]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let (x_min, x_max) = bounds(xs);
    let (y_min, y_max) = bounds(ys);
    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min).max(1e-12) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y_min) / (y_max - y_min).max(1e-12) * (H - 2.0 * MARGIN);
    let points: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
        .collect();
    format!(
        concat!(
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="640" height="400">"#,
            r#"<rect width="640" height="400" fill="white"/>"#,
            r#"<text x="320" y="24" text-anchor="middle" font-size="16">{title}</text>"#,
            r#"<line x1="50" y1="350" x2="590" y2="350" stroke="black"/>"#,
            r#"<line x1="50" y1="50" x2="50" y2="350" stroke="black"/>"#,
            r#"<text x="320" y="388" text-anchor="middle" font-size="12">{x_label}</text>"#,
            r#"<text x="46" y="355" text-anchor="end" font-size="10">{y_min:.4}</text>"#,
            r#"<text x="46" y="56" text-anchor="end" font-size="10">{y_max:.4}</text>"#,
            r#"<text x="50" y="365" text-anchor="middle" font-size="10">{x_min:.0}</text>"#,
            r#"<text x="590" y="365" text-anchor="middle" font-size="10">{x_max:.0}</text>"#,
            r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{points}"/>"##,
            r#"</svg>"#,
        ),
        title = title,
        x_label = x_label,
        x_min = x_min,
        x_max = x_max,
        y_min = y_min,
        y_max = y_max,
        points = points.join(" "),
    )
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if min.is_finite() && max.is_finite() {
        (min, max)
    } else {
        (0.0, 1.0)
    }
}
