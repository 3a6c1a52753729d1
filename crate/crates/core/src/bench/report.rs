//! Comparison tables built purely from metrics CSV files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::metrics::{read_metrics_csv, MemoryRow, MetricsRow};

use super::BenchError;

/// Mean with the maximum semi-dispersion, (max − min) / 2, as error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub err: f64,
}

pub fn estimate(values: &[f64]) -> Option<Estimate> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Some(Estimate {
        mean,
        err: (max - min) / 2.0,
    })
}

/// speedup = t_legacy / t_new; reduction = 1 − t_new / t_legacy.
pub fn derived_ratios(t_legacy: f64, t_new: f64) -> (f64, f64) {
    (t_legacy / t_new, 1.0 - t_new / t_legacy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub mode: String,
    pub phase: String,
    pub runs: usize,
    pub overall_time: Estimate,
    pub overall_rate: Estimate,
    pub job_rate: Estimate,
    pub job_loop_rate: Estimate,
    pub network_read: Estimate,
    pub peak_buffer_bytes: Option<Estimate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub columns: Vec<Column>,
    /// Per mode: pre + post time of each run, estimated over runs.
    pub totals: Vec<(String, Estimate)>,
    pub speedup: Option<f64>,
    pub time_reduction: Option<f64>,
    /// Per phase: new network read / legacy network read.
    pub network_ratio: Vec<(String, f64)>,
}

impl Report {
    pub fn column(&self, mode: &str, phase: &str) -> Option<&Column> {
        self.columns.iter().find(|c| c.mode == mode && c.phase == phase)
    }

    pub fn total(&self, mode: &str) -> Option<Estimate> {
        self.totals.iter().find(|(m, _)| m == mode).map(|(_, e)| *e)
    }
}

fn order_key(mode: &str, phase: &str) -> (usize, usize, String, String) {
    let p = match phase {
        "pre" => 0,
        "post" => 1,
        _ => 2,
    };
    let m = match mode {
        "legacy" => 0,
        "new" => 1,
        _ => 2,
    };
    (p, m, phase.to_string(), mode.to_string())
}

fn est(rows: &[&MetricsRow], f: impl Fn(&MetricsRow) -> f64) -> Estimate {
    let v: Vec<f64> = rows.iter().map(|r| f(r)).collect();
    estimate(&v).expect("non-empty group")
}

/// Builds the report from metrics rows and optional memory rows.
pub fn build_report(rows: &[MetricsRow], memory: &[MemoryRow]) -> Result<Report, BenchError> {
    if rows.is_empty() {
        return Err(BenchError::Invalid("no metrics rows".into()));
    }
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(m, p)| *m == r.mode && *p == r.phase) {
            keys.push((r.mode.clone(), r.phase.clone()));
        }
    }
    keys.sort_by_key(|(m, p)| order_key(m, p));
    let columns = keys
        .iter()
        .map(|(mode, phase)| {
            let group: Vec<&MetricsRow> = rows.iter().filter(|r| r.mode == *mode && r.phase == *phase).collect();
            let mem: Vec<f64> = memory
                .iter()
                .filter(|m| m.mode == *mode && m.phase == *phase)
                .map(|m| m.peak_buffer_bytes as f64)
                .collect();
            Column {
                mode: mode.clone(),
                phase: phase.clone(),
                runs: group.len(),
                overall_time: est(&group, |r| r.overall_time_s),
                overall_rate: est(&group, |r| r.overall_rate_hz),
                job_rate: est(&group, |r| r.job_rate_hz),
                job_loop_rate: est(&group, |r| r.job_loop_rate_hz),
                network_read: est(&group, |r| r.network_read_bytes as f64),
                peak_buffer_bytes: estimate(&mem),
            }
        })
        .collect::<Vec<_>>();

    let mut totals = Vec::new();
    for mode in ["legacy", "new"] {
        let mut run_ids: Vec<&str> = rows.iter().filter(|r| r.mode == mode).map(|r| r.run_id.as_str()).collect();
        run_ids.sort();
        run_ids.dedup();
        let per_run: Vec<f64> = run_ids
            .iter()
            .filter_map(|id| {
                let time = |phase: &str| {
                    rows.iter()
                        .find(|r| r.mode == mode && r.run_id == *id && r.phase == phase)
                        .map(|r| r.overall_time_s)
                };
                Some(time("pre")? + time("post")?)
            })
            .collect();
        if let Some(e) = estimate(&per_run) {
            totals.push((mode.to_string(), e));
        }
    }
    let legacy = totals.iter().find(|(m, _)| m == "legacy").map(|t| t.1.mean);
    let new = totals.iter().find(|(m, _)| m == "new").map(|t| t.1.mean);
    let (speedup, time_reduction) = match (legacy, new) {
        (Some(l), Some(n)) if n > 0.0 && l > 0.0 => {
            let (s, r) = derived_ratios(l, n);
            (Some(s), Some(r))
        }
        _ => (None, None),
    };
    let mut network_ratio = Vec::new();
    for phase in ["pre", "post"] {
        let get = |m: &str| columns.iter().find(|c| c.mode == m && c.phase == phase).map(|c| c.network_read.mean);
        if let (Some(l), Some(n)) = (get("legacy"), get("new")) {
            if l > 0.0 {
                network_ratio.push((phase.to_string(), n / l));
            }
        }
    }
    Ok(Report {
        columns,
        totals,
        speedup,
        time_reduction,
        network_ratio,
    })
}

fn fmt_est(e: Estimate, scale: f64, digits: usize) -> String {
    format!("{:.*} ± {:.*}", digits, e.mean / scale, digits, e.err / scale)
}

/// Fixed-width text table: one column per mode and phase.
pub fn render(report: &Report) -> String {
    type Row<'a> = (&'a str, Box<dyn Fn(&Column) -> String + 'a>);
    let rows: Vec<Row<'_>> = vec![
        ("Overall time [s]", Box::new(|c: &Column| fmt_est(c.overall_time, 1.0, 3))),
        ("Overall rate [Hz]", Box::new(|c: &Column| fmt_est(c.overall_rate, 1.0, 0))),
        ("Job rate [Hz]", Box::new(|c: &Column| fmt_est(c.job_rate, 1.0, 0))),
        ("Job event-loop rate [Hz]", Box::new(|c: &Column| fmt_est(c.job_loop_rate, 1.0, 0))),
        ("Network read [MB]", Box::new(|c: &Column| fmt_est(c.network_read, 1e6, 3))),
    ];
    let headers: Vec<String> = report.columns.iter().map(|c| format!("{} {}", c.mode, c.phase)).collect();
    let cells: Vec<Vec<String>> = rows.iter().map(|(_, f)| report.columns.iter().map(|c| f(c)).collect()).collect();
    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Metric".len());
    let col_w: Vec<usize> = (0..headers.len())
        .map(|j| cells.iter().map(|r| r[j].chars().count()).chain([headers[j].len()]).max().unwrap_or(0))
        .collect();

    let mut out = String::new();
    let _ = write!(out, "{:<label_w$}", "Metric");
    for (h, w) in headers.iter().zip(&col_w) {
        let _ = write!(out, " | {h:>w$}");
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_w + col_w.iter().map(|w| w + 3).sum::<usize>()));
    out.push('\n');
    for ((label, _), row) in rows.iter().zip(&cells) {
        let _ = write!(out, "{label:<label_w$}");
        for (cell, w) in row.iter().zip(&col_w) {
            let pad = w.saturating_sub(cell.chars().count());
            let _ = write!(out, " | {}{cell}", " ".repeat(pad));
        }
        out.push('\n');
    }
    let runs: Vec<String> = report.columns.iter().map(|c| c.runs.to_string()).collect();
    let _ = writeln!(out, "runs per column: {}", runs.join(", "));
    for (mode, e) in &report.totals {
        let _ = writeln!(out, "total time {mode}: {}", fmt_est(*e, 1.0, 3));
    }
    if let (Some(s), Some(r)) = (report.speedup, report.time_reduction) {
        let _ = writeln!(out, "speedup: {s:.2}");
        let _ = writeln!(out, "time reduction: {:.1}%", r * 100.0);
    }
    for (phase, ratio) in &report.network_ratio {
        let _ = writeln!(out, "network read ratio new/legacy ({phase}): {ratio:.4}");
    }
    let mem: Vec<String> = report
        .columns
        .iter()
        .filter_map(|c| c.peak_buffer_bytes.map(|e| format!("{} {}: {}", c.mode, c.phase, fmt_est(e, 1e6, 3))))
        .collect();
    if !mem.is_empty() {
        let _ = writeln!(out, "peak column-buffer MB per task (proxy, not comparable to process memory):");
        for m in mem {
            let _ = writeln!(out, "  {m}");
        }
    }
    out
}

fn read_memory_csv(path: &Path) -> Result<Vec<MemoryRow>, BenchError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| BenchError::Invalid(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<Result<Vec<MemoryRow>, _>>()
        .map_err(|e| BenchError::Invalid(format!("{}: {e}", path.display())))
}

/// Reads metrics files (and a sibling `memory.csv` when present).
pub fn report(metrics_files: &[PathBuf]) -> Result<Report, BenchError> {
    if metrics_files.is_empty() {
        return Err(BenchError::Invalid("no metrics files given".into()));
    }
    let mut rows = Vec::new();
    let mut memory = Vec::new();
    for f in metrics_files {
        rows.extend(read_metrics_csv(f).map_err(|e| BenchError::Invalid(format!("{}: {e}", f.display())))?);
        let mem = f.with_file_name("memory.csv");
        if mem.exists() {
            memory.extend(read_memory_csv(&mem)?);
        }
    }
    build_report(&rows, &memory)
}
