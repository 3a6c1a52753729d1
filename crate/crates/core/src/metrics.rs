//! Job records, rate formulas and the CSV files a run leaves behind.

use std::fs::OpenOptions;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::wire::{ByteReader, ByteWriter, DecodeError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no job records")]
    Empty,
    #[error("total time is zero")]
    ZeroTime,
}

/// Timing and volume of one job (a task of a distributed run or one
/// legacy per-file job).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JobRecord {
    pub id: String,
    pub worker: String,
    /// Distinct input events the job covered.
    pub events: u64,
    /// Whole job, initialization included, seconds.
    pub t_total: f64,
    /// Event loop only, seconds.
    pub t_loop: f64,
    pub bytes_read: u64,
    /// Column-chunk bytes only.
    pub chunk_bytes: u64,
    pub attempt: u32,
    /// Full passes over the input.
    pub passes: u32,
    pub peak_buffer_bytes: u64,
}

impl JobRecord {
    pub fn encode(&self, w: &mut ByteWriter) -> Result<(), DecodeError> {
        w.str(&self.id)?.str(&self.worker)?;
        w.u64(self.events)
            .f64(self.t_total)
            .f64(self.t_loop)
            .u64(self.bytes_read)
            .u64(self.chunk_bytes)
            .u32(self.attempt)
            .u32(self.passes)
            .u64(self.peak_buffer_bytes);
        Ok(())
    }

    pub fn decode(r: &mut ByteReader<'_>) -> Result<JobRecord, DecodeError> {
        Ok(JobRecord {
            id: r.str()?,
            worker: r.str()?,
            events: r.u64()?,
            t_total: r.f64()?,
            t_loop: r.f64()?,
            bytes_read: r.u64()?,
            chunk_bytes: r.u64()?,
            attempt: r.u32()?,
            passes: r.u32()?,
            peak_buffer_bytes: r.u64()?,
        })
    }
}

/// Σ events / Σ t, with t the loop time when `use_loop_time` is set.
pub fn job_rate(records: &[JobRecord], use_loop_time: bool) -> Result<f64, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let events: f64 = records.iter().map(|r| r.events as f64).sum();
    let time: f64 = records
        .iter()
        .map(|r| if use_loop_time { r.t_loop } else { r.t_total })
        .sum();
    if time <= 0.0 {
        return Err(MetricsError::ZeroTime);
    }
    Ok(events / time)
}

pub fn overall_rate(total_events: u64, wall_seconds: f64) -> Result<f64, MetricsError> {
    if wall_seconds <= 0.0 {
        return Err(MetricsError::ZeroTime);
    }
    Ok(total_events as f64 / wall_seconds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub overall_time: f64,
    pub overall_rate: f64,
    pub job_rate: f64,
    pub job_loop_rate: f64,
    pub network_read: u64,
    pub total_events: u64,
    pub n_jobs: usize,
    /// Largest per-job peak of decoded column buffers.
    pub peak_buffer_bytes: u64,
}

/// Combines job records with the run's wall clock. `extra_bytes` covers
/// reads made outside the jobs (planning, metadata).
pub fn aggregate(records: &[JobRecord], wall_seconds: f64, extra_bytes: u64) -> Result<RunMetrics, MetricsError> {
    let total_events: u64 = records.iter().map(|r| r.events).sum();
    Ok(RunMetrics {
        overall_time: wall_seconds,
        overall_rate: overall_rate(total_events, wall_seconds)?,
        job_rate: job_rate(records, false)?,
        job_loop_rate: job_rate(records, true)?,
        network_read: records.iter().map(|r| r.bytes_read).sum::<u64>() + extra_bytes,
        total_events,
        n_jobs: records.len(),
        peak_buffer_bytes: records.iter().map(|r| r.peak_buffer_bytes).max().unwrap_or(0),
    })
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub mode: String,
    pub phase: String,
    pub overall_time_s: f64,
    pub overall_rate_hz: f64,
    pub job_rate_hz: f64,
    pub job_loop_rate_hz: f64,
    pub network_read_bytes: u64,
    pub total_events: u64,
    pub n_jobs: usize,
}

impl MetricsRow {
    pub fn new(run_id: &str, mode: &str, phase: &str, m: &RunMetrics) -> Self {
        MetricsRow {
            run_id: run_id.into(),
            mode: mode.into(),
            phase: phase.into(),
            overall_time_s: m.overall_time,
            overall_rate_hz: m.overall_rate,
            job_rate_hz: m.job_rate,
            job_loop_rate_hz: m.job_loop_rate,
            network_read_bytes: m.network_read,
            total_events: m.total_events,
            n_jobs: m.n_jobs,
        }
    }
}

/// Row of the memory sidecar; the value is a buffer-size proxy, not RSS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRow {
    pub run_id: String,
    pub mode: String,
    pub phase: String,
    pub peak_buffer_bytes: u64,
}

#[derive(Debug, Serialize)]
struct TaskRow<'a> {
    task_id: &'a str,
    worker: &'a str,
    events: u64,
    t_total_s: f64,
    t_loop_s: f64,
    bytes_read: u64,
    attempt: u32,
}

#[derive(Debug, Serialize)]
struct JobRow<'a> {
    task_id: &'a str,
    worker: &'a str,
    events: u64,
    t_total_s: f64,
    t_loop_s: f64,
    bytes_read: u64,
    attempt: u32,
    phase: &'a str,
    passes: u32,
}

fn appender(path: &Path) -> io::Result<csv::Writer<std::fs::File>> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    Ok(csv::WriterBuilder::new().has_headers(fresh).from_writer(file))
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Appends rows to `path`, writing the header if the file is new.
pub fn append_rows<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut w = appender(path)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()
}

/// `tasks.csv`: task_id, worker, events, t_total_s, t_loop_s, bytes_read, attempt.
pub fn append_task_records(path: &Path, records: &[JobRecord]) -> io::Result<()> {
    let rows: Vec<TaskRow<'_>> = records
        .iter()
        .map(|r| TaskRow {
            task_id: &r.id,
            worker: &r.worker,
            events: r.events,
            t_total_s: r.t_total,
            t_loop_s: r.t_loop,
            bytes_read: r.bytes_read,
            attempt: r.attempt,
        })
        .collect();
    append_rows(path, &rows)
}

/// `jobs.csv`: the task columns plus phase and passes.
pub fn append_job_records(path: &Path, phase: &str, records: &[JobRecord]) -> io::Result<()> {
    let rows: Vec<JobRow<'_>> = records
        .iter()
        .map(|r| JobRow {
            task_id: &r.id,
            worker: &r.worker,
            events: r.events,
            t_total_s: r.t_total,
            t_loop_s: r.t_loop,
            bytes_read: r.bytes_read,
            attempt: r.attempt,
            phase,
            passes: r.passes,
        })
        .collect();
    append_rows(path, &rows)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(events: u64, t: f64, loop_t: f64) -> JobRecord {
        JobRecord {
            events,
            t_total: t,
            t_loop: loop_t,
            ..Default::default()
        }
    }

    #[test]
    fn rate_formula() {
        let r = [rec(100, 2.0, 1.5), rec(200, 3.0, 2.0)];
        assert_eq!(job_rate(&r, false).unwrap(), 60.0);
        assert!(job_rate(&r, true).unwrap() >= job_rate(&r, false).unwrap());
        assert_eq!(job_rate(&[], false), Err(MetricsError::Empty));
        assert_eq!(job_rate(&[rec(1, 0.0, 0.0)], false), Err(MetricsError::ZeroTime));
        assert_eq!(overall_rate(0, 3.0).unwrap(), 0.0);
        assert!(overall_rate(1, 0.0).is_err());
    }

    #[test]
    fn single_job_aggregate() {
        let mut r = rec(500, 5.0, 4.0);
        r.bytes_read = 77;
        let m = aggregate(&[r.clone()], 5.0, 0).unwrap();
        assert_eq!(m.overall_rate, m.job_rate);
        assert_eq!(m.network_read, 77);
        assert_eq!(m.job_loop_rate, 125.0);
    }

    #[test]
    fn csv_headers_written_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("tasks.csv");
        append_task_records(&p, &[rec(1, 1.0, 0.5)]).unwrap();
        append_task_records(&p, &[rec(2, 1.0, 0.5)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), "task_id,worker,events,t_total_s,t_loop_s,bytes_read,attempt");
        assert_eq!(text.lines().count(), 3);
    }
}
