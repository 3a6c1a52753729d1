//! Worker daemon: registers with the scheduler, heartbeats, and runs up to
//! `slots` tasks concurrently, each on its own thread with its own reader.

use std::collections::HashMap;
use std::io::BufReader;
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::colstore::{self, fetch_raw, ReadAccount};
use crate::engine::{run_reader, EntryRange, Mode, PartialResult, RangeOptions};
use crate::graph::{build, load_spec, PipelineSpec};
use crate::proto::{read_message, write_message, Message, ProtoError, TaskMode};

use super::resolve_uri;

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error("cannot reach scheduler at {addr}: {source}")]
    Connect { addr: String, source: std::io::Error },
    #[error("lost scheduler connection")]
    Disconnected,
    #[error(transparent)]
    Proto(#[from] ProtoError),
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub name: String,
    pub slots: u32,
    pub heartbeat: Duration,
    /// Data server used for relative dataset paths.
    pub data_server: Option<String>,
    /// Sleep before each task; a fault-injection aid.
    pub task_delay: Duration,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            name: format!("worker-{}", std::process::id()),
            slots: 1,
            heartbeat: Duration::from_secs(2),
            data_server: None,
            task_delay: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TaskOutcome {
    pub partial: PartialResult,
    /// Whole task including payload download and file open, seconds.
    pub t_total: f64,
}

fn passes_of(mode: &TaskMode) -> Vec<Mode> {
    match mode {
        TaskMode::Engine(m) => vec![m.clone()],
        TaskMode::Legacy { passes, .. } => passes.clone(),
    }
}

/// Runs one task: optional payload download, then each pass over the range
/// through a single reader. Byte counters cover the payload, the file
/// metadata and every pass; `events_processed` counts the range once.
pub fn execute_task(
    spec: &PipelineSpec,
    range: &EntryRange,
    mode: &TaskMode,
    range_id: &str,
    cancel: Option<Arc<AtomicBool>>,
) -> Result<TaskOutcome, String> {
    let t0 = Instant::now();
    let mut payload = ReadAccount::default();
    if let TaskMode::Legacy {
        payload_uri,
        payload_bytes,
        ..
    } = mode
    {
        fetch_raw(payload_uri, *payload_bytes, &mut payload).map_err(|e| format!("payload download: {e}"))?;
    }
    let passes = passes_of(mode);
    if passes.is_empty() {
        return Err("task has no passes".into());
    }
    let mut reader = colstore::open(&range.uri).map_err(|e| e.to_string())?;
    let graph = build(spec, &reader.handle().schema).map_err(|e| e.to_string())?;
    let mut out = PartialResult::default();
    for (i, pass) in passes.iter().enumerate() {
        let opts = RangeOptions {
            range_id: Some(range_id.to_string()),
            no_snapshot: i > 0,
            cancel: cancel.clone(),
        };
        let part = run_reader(&graph, &mut reader, range.begin, range.end, pass, &opts).map_err(|e| e.to_string())?;
        if i == 0 {
            out.events_processed = part.events_processed;
        }
        out.results.merge(&part.results).map_err(|e| e.to_string())?;
        out.snapshot_parts.extend(part.snapshot_parts);
        out.t_loop += part.t_loop;
        out.peak_buffer_bytes = out.peak_buffer_bytes.max(part.peak_buffer_bytes);
        // reader counters are cumulative over passes
        out.bytes_read = part.bytes_read;
        out.read_calls = part.read_calls;
        out.chunk_bytes = part.chunk_bytes;
    }
    out.results.sort_by_labels(&graph.universe_labels());
    out.bytes_read += payload.bytes_read;
    out.read_calls += payload.read_calls;
    Ok(TaskOutcome {
        partial: out,
        t_total: t0.elapsed().as_secs_f64(),
    })
}

fn resolve_mode(mode: TaskMode, data: Option<&str>) -> TaskMode {
    match mode {
        TaskMode::Legacy {
            payload_uri,
            payload_bytes,
            passes,
        } => TaskMode::Legacy {
            payload_uri: resolve_uri(&payload_uri, data),
            payload_bytes,
            passes,
        },
        other => other,
    }
}

type Writer = Arc<Mutex<TcpStream>>;

fn send(writer: &Writer, msg: &Message) -> Result<(), ProtoError> {
    let mut w = writer.lock().unwrap_or_else(|p| p.into_inner());
    write_message(&mut *w, msg)
}

fn sleep_unless(cancel: &AtomicBool, total: Duration) {
    let deadline = Instant::now() + total;
    while !cancel.load(Ordering::Relaxed) {
        let now = Instant::now();
        if now >= deadline {
            break;
        }
        thread::sleep((deadline - now).min(Duration::from_millis(20)));
    }
}

fn serve(stream: TcpStream, cfg: WorkerConfig, cancel: Arc<AtomicBool>) -> Result<(), WorkerError> {
    let writer: Writer = Arc::new(Mutex::new(stream.try_clone().map_err(ProtoError::Io)?));
    send(
        &writer,
        &Message::Register {
            worker: cfg.name.clone(),
            slots: cfg.slots,
        },
    )?;

    let hb = {
        let writer = Arc::clone(&writer);
        let cancel = Arc::clone(&cancel);
        let name = cfg.name.clone();
        let every = cfg.heartbeat;
        thread::spawn(move || loop {
            sleep_unless(&cancel, every);
            if cancel.load(Ordering::Relaxed) {
                return;
            }
            if send(&writer, &Message::Heartbeat { worker: name.clone() }).is_err() {
                return;
            }
        })
    };

    let active = Arc::new(AtomicU32::new(0));
    let mut graphs: HashMap<u64, Arc<PipelineSpec>> = HashMap::new();
    let mut reader = BufReader::new(stream);
    let outcome = loop {
        let msg = match read_message(&mut reader) {
            Ok(Some(m)) => m,
            Ok(None) => break Err(WorkerError::Disconnected),
            Err(_) if cancel.load(Ordering::Relaxed) => break Err(WorkerError::Disconnected),
            Err(ProtoError::Io(_)) => break Err(WorkerError::Disconnected),
            Err(e) => break Err(e.into()),
        };
        match msg {
            Message::Shutdown => break Ok(()),
            Message::Graph { graph_id, spec } => match load_spec(&spec) {
                Ok(s) => {
                    graphs.insert(graph_id, Arc::new(s));
                }
                Err(e) => log::warn!("{}: rejected graph {graph_id}: {e}", cfg.name),
            },
            Message::Task {
                task_id,
                graph_id,
                range,
                mode,
                attempt,
            } => {
                let Some(spec) = graphs.get(&graph_id).cloned() else {
                    send(
                        &writer,
                        &Message::Fail {
                            task_id,
                            error: format!("unknown graph {graph_id}"),
                        },
                    )?;
                    continue;
                };
                if active.load(Ordering::SeqCst) >= cfg.slots {
                    send(
                        &writer,
                        &Message::Fail {
                            task_id,
                            error: "no free slot".into(),
                        },
                    )?;
                    continue;
                }
                active.fetch_add(1, Ordering::SeqCst);
                log::debug!("{}: task {task_id} attempt {attempt} {}[{}, {})", cfg.name, range.uri, range.begin, range.end);
                let writer = Arc::clone(&writer);
                let active = Arc::clone(&active);
                let cancel = Arc::clone(&cancel);
                let data = cfg.data_server.clone();
                let delay = cfg.task_delay;
                thread::spawn(move || {
                    let range = EntryRange::new(resolve_uri(&range.uri, data.as_deref()), range.begin, range.end);
                    let mode = resolve_mode(mode, data.as_deref());
                    let t0 = Instant::now();
                    sleep_unless(&cancel, delay);
                    let reply = match execute_task(&spec, &range, &mode, &task_id.to_string(), Some(Arc::clone(&cancel))) {
                        Ok(out) => Message::Result {
                            task_id,
                            t_total: t0.elapsed().as_secs_f64().max(out.t_total),
                            partial: out.partial,
                        },
                        Err(error) => Message::Fail { task_id, error },
                    };
                    active.fetch_sub(1, Ordering::SeqCst);
                    if !cancel.load(Ordering::Relaxed) {
                        let _ = send(&writer, &reply);
                    }
                });
            }
            other => log::warn!("{}: unexpected message kind {}", cfg.name, other.kind()),
        }
    };
    cancel.store(true, Ordering::Relaxed);
    let _ = hb.join();
    outcome
}

fn connect(addr: &str) -> Result<TcpStream, WorkerError> {
    let stream = TcpStream::connect(addr).map_err(|source| WorkerError::Connect {
        addr: addr.to_string(),
        source,
    })?;
    stream.set_nodelay(true).ok();
    Ok(stream)
}

/// Runs a worker until the scheduler sends SHUTDOWN (Ok) or the connection
/// drops (Err).
pub fn worker_main(scheduler: &str, cfg: WorkerConfig) -> Result<(), WorkerError> {
    let stream = connect(scheduler)?;
    serve(stream, cfg, Arc::new(AtomicBool::new(false)))
}

/// In-process worker on its own thread.
pub struct WorkerHandle {
    stream: TcpStream,
    cancel: Arc<AtomicBool>,
    thread: JoinHandle<Result<(), WorkerError>>,
}

impl WorkerHandle {
    /// Drops the connection abruptly and aborts running tasks, as if the
    /// process had died.
    pub fn kill(self) {
        self.cancel.store(true, Ordering::Relaxed);
        let _ = self.stream.shutdown(Shutdown::Both);
        let _ = self.thread.join();
    }

    pub fn join(self) -> Result<(), WorkerError> {
        self.thread.join().unwrap_or(Err(WorkerError::Disconnected))
    }
}

pub fn spawn_worker(scheduler: &str, cfg: WorkerConfig) -> Result<WorkerHandle, WorkerError> {
    let stream = connect(scheduler)?;
    let handle_stream = stream.try_clone().map_err(ProtoError::Io)?;
    let cancel = Arc::new(AtomicBool::new(false));
    let c = Arc::clone(&cancel);
    let thread = thread::spawn(move || serve(stream, cfg, c));
    Ok(WorkerHandle {
        stream: handle_stream,
        cancel,
        thread,
    })
}
