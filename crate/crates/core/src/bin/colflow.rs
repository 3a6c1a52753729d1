//! `colflow` command line: dataset generation, the data server, scheduler
//! and worker daemons, distributed and legacy runs, benchmarks and reports.
//!
//! Exit codes: 0 on success, 2 on validation errors, 1 on runtime failures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};

use colflow::bench::{self, BenchConfig, BenchError, FacilityConfig, GenConfig};
use colflow::cluster::{self, ClusterError, RunOptions, SchedulerConfig, WorkerConfig};
use colflow::colstore;
use colflow::engine::ResultSet;
use colflow::graph::{load_spec, PipelineSpec};
use colflow::legacy::{self, LegacyConfig, LegacyError, LegacyRunReport};
use colflow::metrics::{append_rows, append_task_records, MemoryRow, MetricsRow};
use colflow::proto::PlanKind;

#[derive(Parser)]
#[command(name = "colflow", version, about = "Declarative columnar event analysis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset and its manifest.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        files: usize,
        #[arg(long, default_value_t = 100_000)]
        events: usize,
        #[arg(long, default_value_t = 10_000)]
        cluster_size: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Serve a directory of colstore files over TCP.
    ServeData {
        #[arg(long)]
        root: PathBuf,
        #[arg(long, default_value = "127.0.0.1:7070")]
        listen: String,
    },
    /// Run the scheduler until interrupted.
    Scheduler {
        #[arg(long, default_value = "127.0.0.1:7071")]
        listen: String,
        /// Data server that relative dataset paths refer to.
        #[arg(long)]
        data: Option<String>,
        #[arg(long, default_value_t = 2000)]
        heartbeat_ms: u64,
        #[arg(long, default_value_t = 6000)]
        loss_timeout_ms: u64,
    },
    /// Run a worker until the scheduler shuts it down.
    Worker {
        #[arg(long)]
        scheduler: String,
        #[arg(long, default_value_t = 1)]
        slots: u32,
        /// Data server that relative paths refer to.
        #[arg(long)]
        data: Option<String>,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value_t = 2000)]
        heartbeat_ms: u64,
        /// Sleep before every task (fault-injection aid).
        #[arg(long, default_value_t = 0)]
        task_delay_ms: u64,
    },
    /// Submit a pipeline to the scheduler as one partitioned single-pass run.
    Run {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        scheduler: String,
        #[arg(long, default_value_t = cluster::DEFAULT_PARTITION_FACTOR)]
        partition_factor: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_workers: u32,
        #[arg(long, default_value_t = cluster::DEFAULT_MAX_RETRIES)]
        max_retries: u32,
        #[arg(long, default_value = "run")]
        run_id: String,
        /// Phase label for metrics.csv; inferred from the snapshot stage.
        #[arg(long)]
        phase: Option<String>,
    },
    /// Run the per-file multi-pass baseline.
    Legacy {
        #[arg(value_enum)]
        phase: LegacyPhase,
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        scheduler: String,
        #[arg(long, default_value_t = 0)]
        payload_bytes: u64,
        /// Payload location; relative paths go through the workers' data server.
        #[arg(long, default_value = bench::PAYLOAD)]
        payload_uri: String,
        #[arg(long)]
        out: PathBuf,
        /// 0 runs as many jobs as there are worker slots.
        #[arg(long, default_value_t = 0)]
        parallel_jobs: u32,
        #[arg(long, default_value_t = 1)]
        min_workers: u32,
        #[arg(long, default_value = "run")]
        run_id: String,
    },
    /// Run the four benchmark scenarios on a local facility.
    Bench {
        /// Generated dataset directory (see `gen`).
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[arg(long, default_value_t = 1)]
        slots: u32,
        #[arg(long, default_value_t = 3)]
        partition_factor: u32,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        #[arg(long, default_value_t = 1 << 20)]
        payload_bytes: u64,
        /// Preselection pipeline; dataset and snapshot prefix are replaced.
        #[arg(long)]
        spec_pre: Option<PathBuf>,
        /// Postselection pipeline; dataset is replaced.
        #[arg(long)]
        spec_post: Option<PathBuf>,
        /// Run workers as threads instead of child processes.
        #[arg(long)]
        threads: bool,
    },
    /// Render a comparison table from metrics files.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        metrics: Vec<PathBuf>,
        /// Also write the table to `<out>/report.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LegacyPhase {
    Pre,
    Post,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

type CliResult = Result<(), Failure>;

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

impl From<ClusterError> for Failure {
    fn from(e: ClusterError) -> Self {
        match e {
            ClusterError::EmptyDataset | ClusterError::ZeroParameter(_) => Failure::Validation(e.to_string()),
            other => runtime(other),
        }
    }
}

impl From<LegacyError> for Failure {
    fn from(e: LegacyError) -> Self {
        match e {
            LegacyError::NoSnapshot => Failure::Validation(e.to_string()),
            LegacyError::Cluster(c) => c.into(),
            other => runtime(other),
        }
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Invalid(_) => Failure::Validation(e.to_string()),
            BenchError::Cluster(c) => c.into(),
            BenchError::Legacy(l) => l.into(),
            other => runtime(other),
        }
    }
}

fn read_spec(path: &Path) -> Result<PipelineSpec, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    load_spec(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn write_results(out: &Path, results: &ResultSet) -> CliResult {
    let path = out.join("results.json");
    let text = serde_json::to_string_pretty(&results.to_json()).expect("results serialize");
    fs::write(&path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn append_metrics(out: &Path, row: &MetricsRow, peak_buffer_bytes: u64) -> CliResult {
    let path = out.join("metrics.csv");
    append_rows(&path, std::slice::from_ref(row)).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    let mem = MemoryRow {
        run_id: row.run_id.clone(),
        mode: row.mode.clone(),
        phase: row.phase.clone(),
        peak_buffer_bytes,
    };
    let path = out.join("memory.csv");
    append_rows(&path, &[mem]).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn cmd_gen(out: &Path, cfg: GenConfig) -> CliResult {
    let m = bench::gen(&cfg, out)?;
    println!("{} files, {} events in {}", m.files.len(), m.total_entries, out.display());
    Ok(())
}

fn cmd_serve_data(root: &Path, listen: &str) -> CliResult {
    if !root.is_dir() {
        return Err(Failure::Validation(format!("{} is not a directory", root.display())));
    }
    let server = colstore::serve(root, listen).map_err(runtime)?;
    println!("serving {} on {}", root.display(), server.local_addr());
    server.wait();
    Ok(())
}

fn cmd_scheduler(listen: &str, cfg: SchedulerConfig) -> CliResult {
    let handle = cluster::start_scheduler(listen, cfg).map_err(runtime)?;
    println!("scheduler listening on {}", handle.local_addr());
    handle.wait();
    Ok(())
}

fn cmd_worker(scheduler: &str, cfg: WorkerConfig) -> CliResult {
    if cfg.slots == 0 {
        return Err(Failure::Validation("--slots must be at least 1".into()));
    }
    cluster::worker_main(scheduler, cfg).map_err(runtime)
}

fn cmd_run(spec_path: &Path, scheduler: &str, out: &Path, phase: Option<String>, opts: RunOptions) -> CliResult {
    let spec = read_spec(spec_path)?;
    create_dir(out)?;
    let phase = phase.unwrap_or_else(|| if spec.snapshot().is_some() { "pre" } else { "post" }.into());
    let res = cluster::run_distributed(&spec, scheduler, &opts)?;
    let tasks = out.join("tasks.csv");
    append_task_records(&tasks, &res.records).map_err(|e| runtime(format!("{}: {e}", tasks.display())))?;
    let m = res.metrics().map_err(runtime)?;
    append_metrics(out, &MetricsRow::new(&opts.run_id, "new", &phase, &m), m.peak_buffer_bytes)?;
    write_results(out, &res.merged.results)?;
    println!(
        "{} tasks, {} events in {:.3}s, {} bytes read",
        res.records.len(),
        m.total_events,
        m.overall_time,
        m.network_read
    );
    Ok(())
}

fn cmd_legacy(phase: LegacyPhase, spec_path: &Path, cfg: LegacyConfig) -> CliResult {
    let spec = read_spec(spec_path)?;
    create_dir(&cfg.out_dir)?;
    let rep: LegacyRunReport = match phase {
        LegacyPhase::Pre => legacy::run_legacy_preselection(&spec, &cfg)?,
        LegacyPhase::Post => legacy::run_legacy_postselection(&spec, &cfg)?,
    };
    let m = rep.metrics().map_err(runtime)?;
    append_metrics(&cfg.out_dir, &MetricsRow::new(&cfg.run_id, "legacy", rep.phase.as_str(), &m), m.peak_buffer_bytes)?;
    write_results(&cfg.out_dir, &rep.merged)?;
    println!(
        "{} jobs, {} events in {:.3}s (merge {:.3}s), {} bytes read",
        rep.records.len(),
        m.total_events,
        m.overall_time,
        rep.merge_time,
        m.network_read
    );
    Ok(())
}

fn cmd_bench(cfg: BenchConfig) -> CliResult {
    let rep = bench::bench(&cfg)?;
    print!("{}", rep.table);
    println!("max legacy/new relative difference: {:e}", rep.max_mode_diff);
    if let Some(o) = rep.outcomes.iter().find(|o| !o.bytes_close()) {
        return Err(runtime(format!(
            "{} {} {}: client read {} bytes, server sent {}",
            o.run_id, o.mode, o.phase, o.metrics.network_read, o.served_bytes
        )));
    }
    Ok(())
}

fn cmd_report(metrics: &[PathBuf], out: Option<&Path>) -> CliResult {
    for m in metrics {
        if !m.is_file() {
            return Err(Failure::Validation(format!("{} does not exist", m.display())));
        }
    }
    let report = bench::report(metrics).map_err(|e| Failure::Validation(e.to_string()))?;
    let table = bench::render(&report);
    print!("{table}");
    if let Some(out) = out {
        create_dir(out)?;
        let path = out.join("report.txt");
        fs::write(&path, &table).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn dispatch(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::Gen {
            out,
            files,
            events,
            cluster_size,
            seed,
        } => cmd_gen(
            &out,
            GenConfig {
                n_files: files,
                events_per_file: events,
                cluster_size,
                seed,
            },
        ),
        Cmd::ServeData { root, listen } => cmd_serve_data(&root, &listen),
        Cmd::Scheduler {
            listen,
            data,
            heartbeat_ms,
            loss_timeout_ms,
        } => cmd_scheduler(
            &listen,
            SchedulerConfig {
                heartbeat_interval: Duration::from_millis(heartbeat_ms),
                loss_timeout: Duration::from_millis(loss_timeout_ms),
                data_server: data,
                ..Default::default()
            },
        ),
        Cmd::Worker {
            scheduler,
            slots,
            data,
            name,
            heartbeat_ms,
            task_delay_ms,
        } => cmd_worker(
            &scheduler,
            WorkerConfig {
                name: name.unwrap_or_else(|| format!("worker-{}", std::process::id())),
                slots,
                heartbeat: Duration::from_millis(heartbeat_ms),
                data_server: data,
                task_delay: Duration::from_millis(task_delay_ms),
            },
        ),
        Cmd::Run {
            spec,
            scheduler,
            partition_factor,
            out,
            min_workers,
            max_retries,
            run_id,
            phase,
        } => cmd_run(
            &spec,
            &scheduler,
            &out,
            phase,
            RunOptions {
                run_id,
                plan: PlanKind::Partitioned {
                    factor: partition_factor,
                },
                min_workers,
                max_retries,
                ..Default::default()
            },
        ),
        Cmd::Legacy {
            phase,
            spec,
            scheduler,
            payload_bytes,
            payload_uri,
            out,
            parallel_jobs,
            min_workers,
            run_id,
        } => cmd_legacy(
            phase,
            &spec,
            LegacyConfig {
                scheduler,
                payload_uri,
                payload_bytes,
                parallel_jobs,
                min_workers,
                out_dir: out,
                run_id,
            },
        ),
        Cmd::Bench {
            data,
            out,
            workers,
            slots,
            partition_factor,
            repeats,
            payload_bytes,
            spec_pre,
            spec_post,
            threads,
        } => {
            let worker_exe = if threads {
                None
            } else {
                Some(std::env::current_exe().map_err(runtime)?)
            };
            cmd_bench(BenchConfig {
                data_dir: data,
                out_dir: out,
                facility: FacilityConfig {
                    workers,
                    slots,
                    worker_exe,
                },
                partition_factor,
                repeats,
                payload_bytes,
                pre_spec: spec_pre.as_deref().map(read_spec).transpose()?,
                post_spec: spec_post.as_deref().map(read_spec).transpose()?,
            })
        }
        Cmd::Report { metrics, out } => cmd_report(&metrics, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
