//! Benchmark harness: dataset generation, the four legacy/new scenarios on
//! a self-hosted facility, and Table-1-shaped reports.

mod facility;
mod gen;
mod report;
mod specs;

use std::fs;
use std::path::{Path, PathBuf};

use crate::cluster::{submit, ClusterError, RunOptions};
use crate::engine::ResultSet;
use crate::graph::PipelineSpec;
use crate::legacy::{run_legacy_postselection, run_legacy_preselection, LegacyConfig, LegacyError};
use crate::metrics::{append_rows, append_task_records, JobRecord, MemoryRow, MetricsError, MetricsRow, RunMetrics};
use crate::proto::PlanKind;

pub use facility::{Facility, FacilityConfig};
pub use gen::{gen, generate_columns, write_payload, GenConfig, Manifest, ManifestEntry, MANIFEST, PAYLOAD};
pub use report::{build_report, derived_ratios, estimate, render, report, Column, Estimate, Report};
pub use specs::{default_post_spec, default_pre_spec, SKIM_COLUMNS};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Colstore(#[from] crate::colstore::ColstoreError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Legacy(#[from] LegacyError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl BenchError {
    pub fn io(path: &Path, source: std::io::Error) -> BenchError {
        BenchError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    /// Generated dataset with its manifest; also the data server root.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub facility: FacilityConfig,
    pub partition_factor: u32,
    pub repeats: usize,
    pub payload_bytes: u64,
    /// Defaults to [`default_pre_spec`]; dataset and snapshot prefix are replaced.
    pub pre_spec: Option<PipelineSpec>,
    /// Defaults to [`default_post_spec`]; dataset is replaced.
    pub post_spec: Option<PipelineSpec>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            facility: FacilityConfig::default(),
            partition_factor: 3,
            repeats: 3,
            payload_bytes: 1 << 20,
            pre_spec: None,
            post_spec: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub run_id: String,
    pub mode: &'static str,
    pub phase: &'static str,
    pub metrics: RunMetrics,
    /// Bytes the data server sent during the scenario.
    pub served_bytes: u64,
    /// Column-chunk bytes read by all jobs.
    pub chunk_bytes: u64,
    pub records: Vec<JobRecord>,
    pub results: ResultSet,
}

impl ScenarioOutcome {
    pub fn bytes_close(&self) -> bool {
        self.served_bytes == self.metrics.network_read
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub outcomes: Vec<ScenarioOutcome>,
    pub report: Report,
    pub table: String,
    /// Largest per-bin relative difference between legacy and new results
    /// of the same phase and repeat.
    pub max_mode_diff: f64,
}

impl BenchReport {
    pub fn outcome(&self, run_id: &str, mode: &str, phase: &str) -> Option<&ScenarioOutcome> {
        self.outcomes
            .iter()
            .find(|o| o.run_id == run_id && o.mode == mode && o.phase == phase)
    }
}

struct Recorder<'a> {
    out: &'a Path,
    rows: Vec<MetricsRow>,
    memory: Vec<MemoryRow>,
}

impl Recorder<'_> {
    fn record(&mut self, o: &ScenarioOutcome) -> Result<(), BenchError> {
        let row = MetricsRow::new(&o.run_id, o.mode, o.phase, &o.metrics);
        let mem = MemoryRow {
            run_id: o.run_id.clone(),
            mode: o.mode.into(),
            phase: o.phase.into(),
            peak_buffer_bytes: o.metrics.peak_buffer_bytes,
        };
        let metrics_csv = self.out.join("metrics.csv");
        append_rows(&metrics_csv, std::slice::from_ref(&row)).map_err(|e| BenchError::io(&metrics_csv, e))?;
        let memory_csv = self.out.join("memory.csv");
        append_rows(&memory_csv, std::slice::from_ref(&mem)).map_err(|e| BenchError::io(&memory_csv, e))?;
        log::info!(
            "{} {} {}: {:.3}s, {} bytes read, {} served",
            o.run_id,
            o.mode,
            o.phase,
            o.metrics.overall_time,
            o.metrics.network_read,
            o.served_bytes
        );
        self.rows.push(row);
        self.memory.push(mem);
        Ok(())
    }
}

fn skim_prefix(dir: &Path, label: &str) -> Result<String, BenchError> {
    let d = dir.join(label);
    if d.exists() {
        fs::remove_dir_all(&d).map_err(|e| BenchError::io(&d, e))?;
    }
    fs::create_dir_all(&d).map_err(|e| BenchError::io(&d, e))?;
    Ok(d.join("skim").to_string_lossy().into_owned())
}

fn max_diff(a: &ResultSet, b: &ResultSet) -> f64 {
    a.max_relative_diff(b).unwrap_or(f64::INFINITY)
}

/// Runs legacy-pre, new-pre, legacy-post and new-post `repeats` times on a
/// self-hosted facility, sequentially. Each postselection reads the skim
/// its own mode produced in the same repeat.
pub fn bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    if cfg.repeats == 0 {
        return Err(BenchError::Invalid("repeats must be at least 1".into()));
    }
    let manifest = Manifest::load(&cfg.data_dir)?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| BenchError::io(&cfg.out_dir, e))?;
    let payload = write_payload(&cfg.data_dir, cfg.payload_bytes)?;
    let facility = Facility::start(&cfg.data_dir, &cfg.facility)?;
    let skims = facility.root().join("skims");
    let inputs = manifest
        .paths(&cfg.data_dir)
        .iter()
        .map(|p| facility.uri(p))
        .collect::<Result<Vec<_>, _>>()?;
    let pre_template = cfg.pre_spec.clone().unwrap_or_else(|| default_pre_spec(&inputs, "skim"));
    let post_template = cfg.post_spec.clone().unwrap_or_else(|| default_post_spec(&inputs));
    if pre_template.snapshot().is_none() {
        return Err(BenchError::Invalid("preselection spec needs a snapshot stage".into()));
    }

    let workers = facility.n_workers() as u32;
    let legacy_cfg = |run_id: &str| -> Result<LegacyConfig, BenchError> {
        Ok(LegacyConfig {
            scheduler: facility.scheduler_addr(),
            payload_uri: facility.uri(&payload)?,
            payload_bytes: cfg.payload_bytes,
            parallel_jobs: 0,
            min_workers: workers,
            out_dir: cfg.out_dir.clone(),
            run_id: run_id.into(),
        })
    };
    let new_opts = |run_id: &str| RunOptions {
        run_id: run_id.into(),
        plan: PlanKind::Partitioned {
            factor: cfg.partition_factor,
        },
        min_workers: workers,
        ..Default::default()
    };
    let served = || facility.server().stats().bytes_served();
    let tasks_csv = cfg.out_dir.join("tasks.csv");

    let mut rec = Recorder {
        out: &cfg.out_dir,
        rows: Vec::new(),
        memory: Vec::new(),
    };
    let mut outcomes = Vec::new();
    let mut max_mode_diff = 0.0f64;
    for r in 0..cfg.repeats {
        let run_id = format!("r{r}");

        let spec = pre_template
            .with_dataset(inputs.clone())
            .with_snapshot_out(&skim_prefix(&skims, &format!("legacy_{run_id}"))?);
        let before = served();
        let legacy_pre = run_legacy_preselection(&spec, &legacy_cfg(&run_id)?)?;
        let o = ScenarioOutcome {
            run_id: run_id.clone(),
            mode: "legacy",
            phase: "pre",
            metrics: legacy_pre.metrics()?,
            served_bytes: served() - before,
            chunk_bytes: legacy_pre.chunk_bytes(),
            records: legacy_pre.records.clone(),
            results: legacy_pre.merged.clone(),
        };
        rec.record(&o)?;
        outcomes.push(o);

        let spec = pre_template
            .with_dataset(inputs.clone())
            .with_snapshot_out(&skim_prefix(&skims, &format!("new_{run_id}"))?);
        let before = served();
        let new_pre = submit(&facility.scheduler_addr(), &spec.to_json(), &new_opts(&run_id))?;
        append_task_records(&tasks_csv, &new_pre.records).map_err(|e| BenchError::io(&tasks_csv, e))?;
        let o = ScenarioOutcome {
            run_id: run_id.clone(),
            mode: "new",
            phase: "pre",
            metrics: new_pre.metrics()?,
            served_bytes: served() - before,
            chunk_bytes: new_pre.records.iter().map(|x| x.chunk_bytes).sum(),
            records: new_pre.records.clone(),
            results: new_pre.merged.results.clone(),
        };
        max_mode_diff = max_mode_diff.max(max_diff(&legacy_pre.merged, &o.results));
        rec.record(&o)?;
        outcomes.push(o);

        let mut legacy_skims = legacy_pre.skims.clone();
        legacy_skims.sort();
        let legacy_inputs = legacy_skims
            .iter()
            .map(|p| facility.uri(Path::new(p)))
            .collect::<Result<Vec<_>, _>>()?;
        let before = served();
        let legacy_post = run_legacy_postselection(&post_template.with_dataset(legacy_inputs), &legacy_cfg(&run_id)?)?;
        let o = ScenarioOutcome {
            run_id: run_id.clone(),
            mode: "legacy",
            phase: "post",
            metrics: legacy_post.metrics()?,
            served_bytes: served() - before,
            chunk_bytes: legacy_post.chunk_bytes(),
            records: legacy_post.records.clone(),
            results: legacy_post.merged.clone(),
        };
        rec.record(&o)?;
        outcomes.push(o);

        let mut new_skims = new_pre.merged.snapshot_parts.clone();
        new_skims.sort();
        let new_inputs = new_skims
            .iter()
            .map(|p| facility.uri(Path::new(p)))
            .collect::<Result<Vec<_>, _>>()?;
        let before = served();
        let spec = post_template.with_dataset(new_inputs);
        let new_post = submit(&facility.scheduler_addr(), &spec.to_json(), &new_opts(&run_id))?;
        append_task_records(&tasks_csv, &new_post.records).map_err(|e| BenchError::io(&tasks_csv, e))?;
        let o = ScenarioOutcome {
            run_id: run_id.clone(),
            mode: "new",
            phase: "post",
            metrics: new_post.metrics()?,
            served_bytes: served() - before,
            chunk_bytes: new_post.records.iter().map(|x| x.chunk_bytes).sum(),
            records: new_post.records.clone(),
            results: new_post.merged.results.clone(),
        };
        max_mode_diff = max_mode_diff.max(max_diff(&legacy_post.merged, &o.results));
        rec.record(&o)?;
        outcomes.push(o);
    }

    let report = build_report(&rec.rows, &rec.memory)?;
    let table = render(&report);
    let report_path = cfg.out_dir.join("report.txt");
    fs::write(&report_path, &table).map_err(|e| BenchError::io(&report_path, e))?;
    Ok(BenchReport {
        outcomes,
        report,
        table,
        max_mode_diff,
    })
}
