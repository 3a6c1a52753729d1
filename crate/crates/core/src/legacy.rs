//! Baseline batch workflow: one job per file, a payload download before
//! each job, one full pass per topology variation, per-job output files and
//! a local merge step.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::cluster::{submit, ClusterError, RunOptions, RunResult};
use crate::engine::{Mode, ResultSet};
use crate::graph::{PipelineSpec, VaryKind, NOMINAL};
use crate::hist::HistError;
use crate::metrics::{aggregate, append_job_records, JobRecord, MetricsError, RunMetrics};
use crate::proto::{PlanKind, TaskMode};
use crate::wire::{ByteReader, ByteWriter, DecodeError};

const RESULT_MAGIC: &[u8; 4] = b"CFRS";
const RESULT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum LegacyError {
    #[error("preselection spec has no snapshot stage")]
    NoSnapshot,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: not a result file")]
    BadMagic { path: PathBuf },
    #[error("{path}: {source}")]
    Decode { path: PathBuf, source: DecodeError },
    #[error("{path}: {source}")]
    Merge { path: PathBuf, source: HistError },
    #[error("no result files to merge")]
    NothingToMerge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Preselection,
    Postselection,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Preselection => "pre",
            Phase::Postselection => "post",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One per input file.
#[derive(Debug, Clone, PartialEq)]
pub struct LegacyJobSpec {
    pub job_id: u64,
    pub input: String,
    pub phase: Phase,
    pub passes: Vec<Mode>,
    pub payload_bytes: u64,
}

/// Passes of a job: the nominal universe for preselection; for
/// postselection a nominal pass that also fills weight variations, then one
/// pass per topology variation.
pub fn legacy_passes(spec: &PipelineSpec, phase: Phase) -> Vec<Mode> {
    match phase {
        Phase::Preselection => vec![Mode::OnlyUniverse(NOMINAL.into())],
        Phase::Postselection => std::iter::once(Mode::WeightPass)
            .chain(spec.tags_of_kind(VaryKind::Topology).into_iter().map(Mode::OnlyUniverse))
            .collect(),
    }
}

pub fn job_specs(spec: &PipelineSpec, phase: Phase, payload_bytes: u64) -> Vec<LegacyJobSpec> {
    let passes = legacy_passes(spec, phase);
    spec.dataset
        .iter()
        .enumerate()
        .map(|(i, f)| LegacyJobSpec {
            job_id: i as u64,
            input: f.clone(),
            phase,
            passes: passes.clone(),
            payload_bytes,
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LegacyConfig {
    pub scheduler: String,
    /// File the jobs download before running; ignored when `payload_bytes` is 0.
    pub payload_uri: String,
    pub payload_bytes: u64,
    /// Jobs allowed to run at once; 0 for as many as there are worker slots.
    pub parallel_jobs: u32,
    pub min_workers: u32,
    /// Per-job result files go to `<out_dir>/legacy-<phase>/`; `jobs.csv`
    /// is appended in `out_dir`.
    pub out_dir: PathBuf,
    pub run_id: String,
}

#[derive(Debug, Clone)]
pub struct LegacyRunReport {
    pub phase: Phase,
    pub records: Vec<JobRecord>,
    pub result_files: Vec<PathBuf>,
    /// Snapshot parts, one per job (preselection only).
    pub skims: Vec<String>,
    pub merged: ResultSet,
    /// Submission to last job, seconds.
    pub jobs_time: f64,
    pub merge_time: f64,
    pub planning_bytes: u64,
}

impl LegacyRunReport {
    /// Jobs plus the merge step.
    pub fn overall_time(&self) -> f64 {
        self.jobs_time + self.merge_time
    }

    pub fn network_read(&self) -> u64 {
        self.records.iter().map(|r| r.bytes_read).sum::<u64>() + self.planning_bytes
    }

    pub fn chunk_bytes(&self) -> u64 {
        self.records.iter().map(|r| r.chunk_bytes).sum()
    }

    pub fn metrics(&self) -> Result<RunMetrics, MetricsError> {
        aggregate(&self.records, self.overall_time(), self.planning_bytes)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LegacyError + '_ {
    move |source| LegacyError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_result_file(path: &Path, results: &ResultSet) -> Result<(), LegacyError> {
    let mut w = ByteWriter::new();
    w.bytes(RESULT_MAGIC).u32(RESULT_VERSION);
    results.encode(&mut w).map_err(|source| LegacyError::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, w.into_inner()).map_err(io_err(path))
}

pub fn read_result_file(path: &Path) -> Result<ResultSet, LegacyError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let decode = |source| LegacyError::Decode {
        path: path.to_path_buf(),
        source,
    };
    let mut r = ByteReader::new(&bytes);
    let magic = r.take(4).map_err(|e| decode(e.into()))?;
    if magic != RESULT_MAGIC || r.u32().map_err(|e| decode(e.into()))? != RESULT_VERSION {
        return Err(LegacyError::BadMagic { path: path.to_path_buf() });
    }
    let set = ResultSet::decode(&mut r).map_err(decode)?;
    if r.remaining() != 0 {
        return Err(decode(DecodeError::Trailing(r.remaining())));
    }
    Ok(set)
}

/// Merges per-job result files in the given order.
pub fn merge_outputs(files: &[PathBuf]) -> Result<ResultSet, LegacyError> {
    let (first, rest) = files.split_first().ok_or(LegacyError::NothingToMerge)?;
    let mut merged = read_result_file(first)?;
    for f in rest {
        let part = read_result_file(f)?;
        if part.labels() != merged.labels() {
            return Err(LegacyError::Merge {
                path: f.clone(),
                source: HistError::Incompatible {
                    left: merged.labels().join(","),
                    right: part.labels().join(","),
                    reason: "universe sets differ".into(),
                },
            });
        }
        merged.merge(&part).map_err(|source| LegacyError::Merge { path: f.clone(), source })?;
    }
    Ok(merged)
}

fn run_phase(spec: &PipelineSpec, cfg: &LegacyConfig, phase: Phase) -> Result<LegacyRunReport, LegacyError> {
    let mode = TaskMode::Legacy {
        payload_uri: cfg.payload_uri.clone(),
        payload_bytes: cfg.payload_bytes,
        passes: legacy_passes(spec, phase),
    };
    let opts = RunOptions {
        run_id: cfg.run_id.clone(),
        plan: PlanKind::PerFile,
        mode,
        min_workers: cfg.min_workers,
        keep_partials: true,
        max_retries: 0,
        max_concurrent: cfg.parallel_jobs,
        timeout: None,
    };
    let run: RunResult = submit(&cfg.scheduler, &spec.to_json(), &opts)?;

    let dir = cfg.out_dir.join(format!("legacy-{phase}"));
    let mut result_files = Vec::with_capacity(run.partials.len());
    let mut skims = Vec::new();
    for (job, partial) in &run.partials {
        let path = dir.join(format!("job{job}.res"));
        write_result_file(&path, &partial.results)?;
        result_files.push(path);
        skims.extend(partial.snapshot_parts.iter().cloned());
    }
    let t0 = Instant::now();
    let merged = merge_outputs(&result_files)?;
    let merge_time = t0.elapsed().as_secs_f64();

    let jobs_csv = cfg.out_dir.join("jobs.csv");
    append_job_records(&jobs_csv, phase.as_str(), &run.records).map_err(io_err(&jobs_csv))?;
    Ok(LegacyRunReport {
        phase,
        records: run.records,
        result_files,
        skims,
        merged,
        jobs_time: run.wall_time,
        merge_time,
        planning_bytes: run.planning_bytes,
    })
}

/// Skims every input file with one nominal pass per file.
pub fn run_legacy_preselection(spec: &PipelineSpec, cfg: &LegacyConfig) -> Result<LegacyRunReport, LegacyError> {
    if spec.snapshot().is_none() {
        return Err(LegacyError::NoSnapshot);
    }
    run_phase(spec, cfg, Phase::Preselection)
}

/// `spec.dataset` lists the skim files.
pub fn run_legacy_postselection(spec: &PipelineSpec, cfg: &LegacyConfig) -> Result<LegacyRunReport, LegacyError> {
    run_phase(spec, cfg, Phase::Postselection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::load_spec;

    #[test]
    fn pass_lists() {
        let spec = load_spec(
            r#"{"dataset": ["a", "b"], "stages": [
              {"op":"vary","column":"x","kind":"topology","tags":["t1","t2"],"exprs":["x","x"]},
              {"op":"vary","column":"w","kind":"weight","tags":["w1"],"exprs":["w"]},
              {"op":"count","name":"n"}]}"#,
        )
        .unwrap();
        assert_eq!(
            legacy_passes(&spec, Phase::Postselection),
            vec![Mode::WeightPass, Mode::OnlyUniverse("t1".into()), Mode::OnlyUniverse("t2".into())]
        );
        assert_eq!(legacy_passes(&spec, Phase::Preselection), vec![Mode::OnlyUniverse(NOMINAL.into())]);
        let jobs = job_specs(&spec, Phase::Postselection, 10);
        assert_eq!(jobs.len(), 2);
        assert_eq!(jobs[1].input, "b");
    }
}
