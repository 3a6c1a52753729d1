//! Distributed runtime: partition planner, scheduler, worker daemon and the
//! submitting client.
//!
//! A client sends one SUBMIT per run. The scheduler plans tasks, ships the
//! pipeline document to each worker once (GRAPH), pushes TASKs to idle
//! slots, merges RESULTs as they arrive and answers with COMPLETE.

mod client;
mod scheduler;
mod worker;

use std::sync::Arc;

use crate::colstore::{DatasetHandle, REMOTE_SCHEME};
use crate::engine::EntryRange;

pub use client::{run_distributed, submit, RunOptions, RunResult};
pub use scheduler::{
    start_scheduler, LogEvent, LogKind, SchedulerConfig, SchedulerHandle, SchedulerStats,
};
pub use worker::{execute_task, spawn_worker, worker_main, TaskOutcome, WorkerConfig, WorkerError, WorkerHandle};

/// Default tasks per worker.
pub const DEFAULT_PARTITION_FACTOR: u32 = 3;
pub const DEFAULT_MAX_RETRIES: u32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{0} must be at least 1")]
    ZeroParameter(&'static str),
    #[error("run failed: {0}")]
    RunFailed(String),
    #[error("scheduler connection: {0}")]
    Connection(String),
    #[error(transparent)]
    Proto(#[from] crate::proto::ProtoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One unit of work: a cluster-aligned range of one file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskSpec {
    pub task_id: u64,
    pub range: EntryRange,
    /// 1 for the first dispatch.
    pub attempt: u32,
}

/// Splits `n` items into `parts` contiguous groups whose sizes differ by at
/// most one, larger groups first.
fn split_even(n: usize, parts: usize) -> Vec<usize> {
    let base = n / parts;
    let extra = n % parts;
    (0..parts).map(|i| base + usize::from(i < extra)).collect()
}

/// Tasks per file: proportional to cluster counts (largest remainder), at
/// least one per non-empty file, never more than its clusters.
fn tasks_per_file(clusters: &[usize], target: usize) -> Vec<usize> {
    let total: usize = clusters.iter().sum();
    let mut alloc: Vec<usize> = Vec::with_capacity(clusters.len());
    let mut fracs: Vec<(f64, usize)> = Vec::new();
    for (i, &c) in clusters.iter().enumerate() {
        if c == 0 {
            alloc.push(0);
            continue;
        }
        let exact = target as f64 * c as f64 / total as f64;
        let base = (exact.floor() as usize).clamp(1, c);
        alloc.push(base);
        fracs.push((exact - exact.floor(), i));
    }
    let mut assigned: usize = alloc.iter().sum();
    fracs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    while assigned < target {
        let mut progressed = false;
        for &(_, i) in &fracs {
            if assigned >= target {
                break;
            }
            if alloc[i] < clusters[i] {
                alloc[i] += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    alloc
}

/// Cluster-aligned tasks, about `factor × nworkers` of them. Tasks never
/// span files; with fewer clusters than that, one task per cluster.
pub fn plan_partitions(
    dataset: &[Arc<DatasetHandle>],
    nworkers: usize,
    factor: u32,
) -> Result<Vec<TaskSpec>, ClusterError> {
    if dataset.is_empty() {
        return Err(ClusterError::EmptyDataset);
    }
    if nworkers == 0 {
        return Err(ClusterError::ZeroParameter("nworkers"));
    }
    if factor == 0 {
        return Err(ClusterError::ZeroParameter("factor"));
    }
    let target = factor as usize * nworkers;
    let counts: Vec<usize> = dataset.iter().map(|h| h.clusters.len()).collect();
    let total: usize = counts.iter().sum();
    let per_file = if total <= target {
        counts.clone()
    } else {
        tasks_per_file(&counts, target)
    };
    let mut tasks = Vec::new();
    for (h, &ntasks) in dataset.iter().zip(&per_file) {
        if ntasks == 0 {
            continue;
        }
        let mut next = 0usize;
        for size in split_even(h.clusters.len(), ntasks) {
            let first = &h.clusters[next];
            let last = &h.clusters[next + size - 1];
            tasks.push(TaskSpec {
                task_id: tasks.len() as u64,
                range: EntryRange::new(h.uri.clone(), first.entry_start, last.entry_end()),
                attempt: 1,
            });
            next += size;
        }
    }
    Ok(tasks)
}

/// One task per file covering all of it, empty files included.
pub fn plan_per_file(dataset: &[Arc<DatasetHandle>]) -> Result<Vec<TaskSpec>, ClusterError> {
    if dataset.is_empty() {
        return Err(ClusterError::EmptyDataset);
    }
    Ok(dataset
        .iter()
        .enumerate()
        .map(|(i, h)| TaskSpec {
            task_id: i as u64,
            range: EntryRange::new(h.uri.clone(), 0, h.total_entries),
            attempt: 1,
        })
        .collect())
}

/// Prefixes a relative path with the data server address, if one is set.
pub fn resolve_uri(uri: &str, data_server: Option<&str>) -> String {
    match data_server {
        Some(addr) if !uri.starts_with(REMOTE_SCHEME) && !uri.starts_with('/') => {
            format!("{REMOTE_SCHEME}{addr}/{uri}")
        }
        _ => uri.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::colstore::{ClusterInfo, TransportKind};

    fn handle(uri: &str, sizes: &[u32]) -> Arc<DatasetHandle> {
        let mut start = 0;
        let clusters = sizes
            .iter()
            .map(|&n| {
                let c = ClusterInfo {
                    entry_start: start,
                    entry_count: n,
                    chunks: Vec::new(),
                };
                start += u64::from(n);
                c
            })
            .collect();
        Arc::new(DatasetHandle {
            uri: uri.into(),
            schema: Vec::new(),
            clusters,
            total_entries: start,
            transport: TransportKind::Local,
            file_size: 0,
            meta_bytes: 0,
        })
    }

    fn coverage_ok(files: &[Arc<DatasetHandle>], tasks: &[TaskSpec]) {
        for h in files {
            let mut ranges: Vec<_> = tasks.iter().filter(|t| t.range.uri == h.uri).map(|t| (t.range.begin, t.range.end)).collect();
            ranges.sort();
            let mut at = 0;
            for (b, e) in ranges {
                assert_eq!(b, at, "gap or overlap in {}", h.uri);
                assert!(h.clusters.iter().any(|c| c.entry_start == b));
                at = e;
            }
            assert_eq!(at, h.total_entries);
        }
    }

    #[test]
    fn even_division() {
        let files = vec![handle("a", &[10; 12])];
        let t = plan_partitions(&files, 2, 3).unwrap();
        assert_eq!(t.len(), 6);
        assert!(t.iter().all(|t| t.range.len() == 20));
        coverage_ok(&files, &t);
    }

    #[test]
    fn cluster_floor() {
        let files = vec![handle("a", &[5]), handle("b", &[7])];
        let t = plan_partitions(&files, 2, 3).unwrap();
        assert_eq!(t.len(), 2);
        coverage_ok(&files, &t);
    }

    #[test]
    fn uneven_files_and_group_sizes() {
        let files = vec![handle("a", &[10; 10]), handle("b", &[10; 3]), handle("c", &[]), handle("d", &[10, 10, 4])];
        for (w, f) in [(1, 1), (2, 3), (4, 3), (3, 10)] {
            let t = plan_partitions(&files, w, f).unwrap();
            coverage_ok(&files, &t);
            for h in &files {
                let sizes: Vec<usize> = t
                    .iter()
                    .filter(|x| x.range.uri == h.uri)
                    .map(|x| h.clusters_overlapping(x.range.begin, x.range.end).len())
                    .collect();
                if let (Some(max), Some(min)) = (sizes.iter().max(), sizes.iter().min()) {
                    assert!(max - min <= 1, "{sizes:?}");
                }
            }
            assert_eq!(t, plan_partitions(&files, w, f).unwrap(), "deterministic");
        }
        assert_eq!(plan_partitions(&files, 4, 3).unwrap().len(), 12);
    }

    #[test]
    fn errors_and_per_file() {
        assert!(matches!(plan_partitions(&[], 1, 3), Err(ClusterError::EmptyDataset)));
        let files = vec![handle("a", &[3, 3]), handle("b", &[])];
        assert!(plan_partitions(&files, 0, 3).is_err());
        let t = plan_per_file(&files).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!((t[0].range.begin, t[0].range.end), (0, 6));
        assert_eq!(t[1].range.len(), 0);
    }

    #[test]
    fn resolves_relative_paths() {
        assert_eq!(resolve_uri("x/a.col", Some("h:1")), "colsrv://h:1/x/a.col");
        assert_eq!(resolve_uri("/abs/a.col", Some("h:1")), "/abs/a.col");
        assert_eq!(resolve_uri("x.col", None), "x.col");
    }
}
