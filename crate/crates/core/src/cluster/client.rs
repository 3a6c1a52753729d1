//! Submitting side: one SUBMIT, one COMPLETE.

use std::io::BufReader;
use std::net::TcpStream;
use std::time::Duration;

use crate::engine::{Mode, PartialResult};
use crate::graph::PipelineSpec;
use crate::metrics::{aggregate, JobRecord, MetricsError, RunMetrics};
use crate::proto::{read_message, write_message, Message, PlanKind, Submit, TaskMode};

use super::{ClusterError, DEFAULT_MAX_RETRIES, DEFAULT_PARTITION_FACTOR};

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub run_id: String,
    pub plan: PlanKind,
    pub mode: TaskMode,
    /// Workers that must be registered before planning starts.
    pub min_workers: u32,
    pub keep_partials: bool,
    pub max_retries: u32,
    /// Cap on concurrently running tasks; 0 for none.
    pub max_concurrent: u32,
    /// Give up waiting for COMPLETE after this long.
    pub timeout: Option<Duration>,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            run_id: "run".into(),
            plan: PlanKind::Partitioned {
                factor: DEFAULT_PARTITION_FACTOR,
            },
            mode: TaskMode::Engine(Mode::SinglePass),
            min_workers: 1,
            keep_partials: false,
            max_retries: DEFAULT_MAX_RETRIES,
            max_concurrent: 0,
            timeout: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_id: String,
    /// Merged over all tasks; empty results when partials were kept.
    pub merged: PartialResult,
    /// (task index, partial) in task order, when requested.
    pub partials: Vec<(u64, PartialResult)>,
    /// One per completed task, in task order.
    pub records: Vec<JobRecord>,
    pub wall_time: f64,
    pub planning_bytes: u64,
    pub retries: u32,
}

impl RunResult {
    /// Bytes read by tasks plus the scheduler's planning reads.
    pub fn network_read(&self) -> u64 {
        self.records.iter().map(|r| r.bytes_read).sum::<u64>() + self.planning_bytes
    }

    pub fn metrics(&self) -> Result<RunMetrics, MetricsError> {
        aggregate(&self.records, self.wall_time, self.planning_bytes)
    }
}

/// Submits a pipeline document and blocks until the run completes.
pub fn submit(scheduler: &str, spec: &str, opts: &RunOptions) -> Result<RunResult, ClusterError> {
    let mut stream = TcpStream::connect(scheduler).map_err(|e| ClusterError::Connection(format!("{scheduler}: {e}")))?;
    stream.set_nodelay(true).ok();
    stream.set_read_timeout(opts.timeout)?;
    write_message(
        &mut stream,
        &Message::Submit(Submit {
            run_id: opts.run_id.clone(),
            spec: spec.to_string(),
            plan: opts.plan,
            mode: opts.mode.clone(),
            min_workers: opts.min_workers,
            keep_partials: opts.keep_partials,
            max_retries: opts.max_retries,
            max_concurrent: opts.max_concurrent,
        }),
    )?;
    let mut reader = BufReader::new(stream);
    match read_message(&mut reader)? {
        Some(Message::Complete(c)) => {
            if !c.error.is_empty() {
                return Err(ClusterError::RunFailed(c.error));
            }
            Ok(RunResult {
                run_id: c.run_id,
                merged: c.merged,
                partials: c.partials,
                records: c.records,
                wall_time: c.wall_time,
                planning_bytes: c.planning_bytes,
                retries: c.retries,
            })
        }
        Some(other) => Err(ClusterError::Connection(format!("unexpected message kind {}", other.kind()))),
        None => Err(ClusterError::Connection("scheduler closed the connection".into())),
    }
}

pub fn run_distributed(spec: &PipelineSpec, scheduler: &str, opts: &RunOptions) -> Result<RunResult, ClusterError> {
    submit(scheduler, &spec.to_json(), opts)
}
