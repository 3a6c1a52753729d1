//! Scheduler: connection threads decode frames and forward them to a single
//! control loop that owns all run and worker state.

use std::collections::{BTreeMap, BTreeSet, HashSet, VecDeque};
use std::io::{self, BufReader};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::colstore::{self, DatasetHandle};
use crate::engine::PartialResult;
use crate::graph::{build, common_schema, load_spec};
use crate::metrics::JobRecord;
use crate::proto::{read_message, write_message, Complete, Message, PlanKind, Submit, TaskMode};

use super::{plan_partitions, plan_per_file, resolve_uri, TaskSpec};

#[derive(Debug, Clone)]
pub struct SchedulerConfig {
    pub heartbeat_interval: Duration,
    /// Silence after which a worker is declared lost.
    pub loss_timeout: Duration,
    /// How long a submission waits for its minimum worker count.
    pub startup_timeout: Duration,
    /// Data server used for relative dataset paths.
    pub data_server: Option<String>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            heartbeat_interval: Duration::from_secs(2),
            loss_timeout: Duration::from_secs(6),
            startup_timeout: Duration::from_secs(60),
            data_server: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    Dispatch,
    Complete,
    Duplicate,
    Fail,
    /// Requeued because its worker was lost.
    Lost,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEvent {
    /// Since scheduler start.
    pub at: Duration,
    pub worker: String,
    /// Task index within its run.
    pub task: u64,
    pub attempt: u32,
    pub kind: LogKind,
}

#[derive(Debug, Default)]
pub struct SchedulerStats {
    log: Mutex<Vec<LogEvent>>,
    workers_lost: AtomicU64,
    duplicates: AtomicU64,
    retries: AtomicU64,
    runs: AtomicU64,
}

impl SchedulerStats {
    pub fn log(&self) -> Vec<LogEvent> {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).clone()
    }

    pub fn workers_lost(&self) -> u64 {
        self.workers_lost.load(Ordering::Relaxed)
    }

    pub fn duplicates_discarded(&self) -> u64 {
        self.duplicates.load(Ordering::Relaxed)
    }

    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn runs_completed(&self) -> u64 {
        self.runs.load(Ordering::Relaxed)
    }

    /// Largest number of tasks a worker held at once, from the log.
    pub fn max_inflight(&self, worker: &str) -> usize {
        let mut now = 0usize;
        let mut max = 0usize;
        for e in self.log().iter().filter(|e| e.worker == worker) {
            match e.kind {
                LogKind::Dispatch => now += 1,
                _ => now = now.saturating_sub(1),
            }
            max = max.max(now);
        }
        max
    }

    fn push(&self, e: LogEvent) {
        self.log.lock().unwrap_or_else(|p| p.into_inner()).push(e);
    }
}

enum Event {
    Join {
        conn: u64,
        name: String,
        slots: u32,
        stream: TcpStream,
    },
    Submit {
        conn: u64,
        submit: Submit,
        stream: TcpStream,
    },
    Msg {
        conn: u64,
        msg: Message,
    },
    Closed {
        conn: u64,
    },
    Shutdown,
}

pub struct SchedulerHandle {
    addr: SocketAddr,
    stats: Arc<SchedulerStats>,
    events: Sender<Event>,
    stop: Arc<AtomicBool>,
    control: Option<JoinHandle<()>>,
    accept: Option<JoinHandle<()>>,
}

impl SchedulerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &Arc<SchedulerStats> {
        &self.stats
    }

    /// Sends SHUTDOWN to every worker and stops.
    pub fn shutdown(mut self) {
        self.stop_all();
    }

    /// Blocks until the scheduler stops.
    pub fn wait(mut self) {
        if let Some(t) = self.control.take() {
            let _ = t.join();
        }
        self.stop_all();
    }

    fn stop_all(&mut self) {
        let _ = self.events.send(Event::Shutdown);
        if let Some(t) = self.control.take() {
            let _ = t.join();
        }
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept.take() {
            let _ = t.join();
        }
    }
}

impl Drop for SchedulerHandle {
    fn drop(&mut self) {
        self.stop_all();
    }
}

pub fn start_scheduler(listen: &str, cfg: SchedulerConfig) -> io::Result<SchedulerHandle> {
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    let (tx, rx) = mpsc::channel();
    let stats = Arc::new(SchedulerStats::default());
    let stop = Arc::new(AtomicBool::new(false));

    let accept = {
        let tx = tx.clone();
        let stop = Arc::clone(&stop);
        thread::spawn(move || {
            let mut next = 0u64;
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
                let Ok(stream) = stream else { continue };
                stream.set_nodelay(true).ok();
                next += 1;
                let conn = next;
                let tx = tx.clone();
                thread::spawn(move || connection(conn, stream, tx));
            }
        })
    };

    let control = {
        let stats = Arc::clone(&stats);
        thread::spawn(move || ControlLoop::new(cfg, stats).run(rx))
    };

    Ok(SchedulerHandle {
        addr,
        stats,
        events: tx,
        stop,
        control: Some(control),
        accept: Some(accept),
    })
}

fn connection(conn: u64, stream: TcpStream, tx: Sender<Event>) {
    let Ok(read_half) = stream.try_clone() else { return };
    let mut reader = BufReader::new(read_half);
    let first = match read_message(&mut reader) {
        Ok(Some(Message::Register { worker, slots })) => Event::Join {
            conn,
            name: worker,
            slots,
            stream,
        },
        Ok(Some(Message::Submit(submit))) => Event::Submit { conn, submit, stream },
        Ok(Some(other)) => {
            log::warn!("connection {conn}: expected REGISTER or SUBMIT, got kind {}", other.kind());
            return;
        }
        Ok(None) => return,
        Err(e) => {
            log::warn!("connection {conn}: {e}");
            return;
        }
    };
    if tx.send(first).is_err() {
        return;
    }
    loop {
        match read_message(&mut reader) {
            Ok(Some(msg)) => {
                if tx.send(Event::Msg { conn, msg }).is_err() {
                    return;
                }
            }
            Ok(None) | Err(_) => {
                let _ = tx.send(Event::Closed { conn });
                return;
            }
        }
    }
}

struct WorkerState {
    name: String,
    slots: u32,
    stream: TcpStream,
    /// Wire task ids.
    inflight: BTreeSet<u64>,
    last_seen: Instant,
    graphs: HashSet<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pending,
    Inflight(u64),
    Done,
}

struct TaskState {
    spec: TaskSpec,
    status: Status,
}

struct Waiting {
    conn: u64,
    stream: TcpStream,
    submit: Submit,
    since: Instant,
}

struct ActiveRun {
    client: u64,
    stream: TcpStream,
    submit: Submit,
    graph_id: u64,
    /// Wire id of task 0.
    base: u64,
    labels: Vec<String>,
    passes: u32,
    tasks: Vec<TaskState>,
    pending: VecDeque<usize>,
    done: usize,
    merged: PartialResult,
    partials: Vec<(u64, PartialResult)>,
    records: Vec<JobRecord>,
    started: Instant,
    planning_bytes: u64,
    retries: u32,
}

struct ControlLoop {
    cfg: SchedulerConfig,
    stats: Arc<SchedulerStats>,
    t0: Instant,
    workers: BTreeMap<u64, WorkerState>,
    waiting: VecDeque<Waiting>,
    active: Option<ActiveRun>,
    next_graph: u64,
    next_task: u64,
}

struct Planned {
    labels: Vec<String>,
    tasks: Vec<TaskSpec>,
    planning_bytes: u64,
}

impl ControlLoop {
    fn new(cfg: SchedulerConfig, stats: Arc<SchedulerStats>) -> Self {
        ControlLoop {
            cfg,
            stats,
            t0: Instant::now(),
            workers: BTreeMap::new(),
            waiting: VecDeque::new(),
            active: None,
            next_graph: 1,
            next_task: 0,
        }
    }

    fn run(mut self, rx: Receiver<Event>) {
        let tick = (self.cfg.heartbeat_interval / 4).clamp(Duration::from_millis(5), Duration::from_millis(100));
        loop {
            match rx.recv_timeout(tick) {
                Ok(Event::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                Ok(ev) => self.handle(ev),
                Err(RecvTimeoutError::Timeout) => {}
            }
            self.check_heartbeats();
            self.maybe_start();
            self.dispatch();
        }
        if self.active.is_some() {
            self.fail_run("scheduler shutting down".into());
        }
        while let Some(w) = self.waiting.pop_front() {
            reply_error(w.stream, &w.submit.run_id, "scheduler shutting down".into());
        }
        for (_, mut w) in std::mem::take(&mut self.workers) {
            let _ = write_message(&mut w.stream, &Message::Shutdown);
        }
    }

    fn log(&self, worker: &str, task: u64, attempt: u32, kind: LogKind) {
        self.stats.push(LogEvent {
            at: self.t0.elapsed(),
            worker: worker.to_string(),
            task,
            attempt,
            kind,
        });
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Join { conn, name, slots, stream } => {
                log::info!("worker {name} joined with {slots} slots");
                self.workers.insert(
                    conn,
                    WorkerState {
                        name,
                        slots: slots.max(1),
                        stream,
                        inflight: BTreeSet::new(),
                        last_seen: Instant::now(),
                        graphs: HashSet::new(),
                    },
                );
            }
            Event::Submit { conn, submit, stream } => {
                log::info!("run {} submitted", submit.run_id);
                self.waiting.push_back(Waiting {
                    conn,
                    stream,
                    submit,
                    since: Instant::now(),
                });
            }
            Event::Msg { conn, msg } => {
                let Some(w) = self.workers.get_mut(&conn) else { return };
                w.last_seen = Instant::now();
                match msg {
                    Message::Heartbeat { .. } => {}
                    Message::Result {
                        task_id,
                        t_total,
                        partial,
                    } => self.on_result(conn, task_id, t_total, partial),
                    Message::Fail { task_id, error } => self.on_fail(conn, task_id, error),
                    other => log::warn!("worker {}: unexpected kind {}", w.name, other.kind()),
                }
            }
            Event::Closed { conn } => {
                if self.workers.contains_key(&conn) {
                    self.lose_worker(conn, "connection closed");
                } else if self.active.as_ref().is_some_and(|r| r.client == conn) {
                    log::warn!("client went away; abandoning run");
                    self.active = None;
                } else {
                    self.waiting.retain(|w| w.conn != conn);
                }
            }
            Event::Shutdown => {}
        }
    }

    fn check_heartbeats(&mut self) {
        let limit = self.cfg.loss_timeout;
        let silent: Vec<u64> = self
            .workers
            .iter()
            .filter(|(_, w)| w.last_seen.elapsed() > limit)
            .map(|(c, _)| *c)
            .collect();
        for conn in silent {
            self.lose_worker(conn, "heartbeat timeout");
        }
    }

    fn lose_worker(&mut self, conn: u64, why: &str) {
        let Some(w) = self.workers.remove(&conn) else { return };
        log::warn!("worker {} lost: {why}", w.name);
        let _ = w.stream.shutdown(Shutdown::Both);
        self.stats.workers_lost.fetch_add(1, Ordering::Relaxed);
        for wire in w.inflight {
            let Some(run) = self.active.as_ref() else { break };
            let Some(idx) = wire.checked_sub(run.base).map(|i| i as usize) else { continue };
            if run.tasks.get(idx).is_some_and(|t| t.status == Status::Inflight(conn)) {
                let attempt = run.tasks[idx].spec.attempt;
                self.log(&w.name, idx as u64, attempt, LogKind::Lost);
                self.requeue(idx, format!("worker {} lost ({why})", w.name));
            }
        }
    }

    fn requeue(&mut self, idx: usize, reason: String) {
        let Some(run) = self.active.as_mut() else { return };
        let task = &mut run.tasks[idx];
        if task.spec.attempt > run.submit.max_retries {
            let msg = format!("task {idx} failed after {} attempts: {reason}", task.spec.attempt);
            self.fail_run(msg);
            return;
        }
        task.spec.attempt += 1;
        task.status = Status::Pending;
        run.pending.push_front(idx);
        run.retries += 1;
        self.stats.retries.fetch_add(1, Ordering::Relaxed);
    }

    fn task_index(&self, wire: u64) -> Option<usize> {
        let run = self.active.as_ref()?;
        let idx = wire.checked_sub(run.base)? as usize;
        (idx < run.tasks.len()).then_some(idx)
    }

    fn on_result(&mut self, conn: u64, wire: u64, t_total: f64, partial: PartialResult) {
        let name = match self.workers.get_mut(&conn) {
            Some(w) => {
                w.inflight.remove(&wire);
                w.name.clone()
            }
            None => return,
        };
        let Some(idx) = self.task_index(wire) else { return };
        let run = self.active.as_mut().expect("task index implies an active run");
        let task = &mut run.tasks[idx];
        let attempt = task.spec.attempt;
        if task.status == Status::Done {
            self.stats.duplicates.fetch_add(1, Ordering::Relaxed);
            self.log(&name, idx as u64, attempt, LogKind::Duplicate);
            return;
        }
        if let Status::Inflight(other) = task.status {
            if other != conn {
                if let Some(w) = self.workers.get_mut(&other) {
                    w.inflight.remove(&wire);
                }
            }
        }
        if task.status == Status::Pending {
            run.pending.retain(|&p| p != idx);
        }
        task.status = Status::Done;
        run.done += 1;
        run.records.push(JobRecord {
            id: idx.to_string(),
            worker: name.clone(),
            events: partial.events_processed,
            t_total,
            t_loop: partial.t_loop,
            bytes_read: partial.bytes_read,
            chunk_bytes: partial.chunk_bytes,
            attempt,
            passes: run.passes,
            peak_buffer_bytes: partial.peak_buffer_bytes,
        });
        let merged = if run.submit.keep_partials {
            run.partials.push((idx as u64, partial));
            Ok(())
        } else {
            run.merged.merge(&partial)
        };
        self.log(&name, idx as u64, attempt, LogKind::Complete);
        if let Err(e) = merged {
            self.fail_run(format!("merging task {idx}: {e}"));
        } else if run_finished(self.active.as_ref()) {
            self.finish_run();
        }
    }

    fn on_fail(&mut self, conn: u64, wire: u64, error: String) {
        let name = match self.workers.get_mut(&conn) {
            Some(w) => {
                w.inflight.remove(&wire);
                w.name.clone()
            }
            None => return,
        };
        let Some(idx) = self.task_index(wire) else { return };
        let run = self.active.as_ref().expect("active run");
        if run.tasks[idx].status != Status::Inflight(conn) {
            return;
        }
        log::warn!("task {idx} failed on {name}: {error}");
        self.log(&name, idx as u64, run.tasks[idx].spec.attempt, LogKind::Fail);
        self.requeue(idx, error);
    }

    fn maybe_start(&mut self) {
        if self.active.is_some() {
            return;
        }
        let Some(front) = self.waiting.front() else { return };
        let need = front.submit.min_workers.max(1) as usize;
        if self.workers.len() < need {
            if front.since.elapsed() > self.cfg.startup_timeout {
                let w = self.waiting.pop_front().expect("front exists");
                let msg = format!("{} of {need} workers registered before the startup timeout", self.workers.len());
                reply_error(w.stream, &w.submit.run_id, msg);
            }
            return;
        }
        let w = self.waiting.pop_front().expect("front exists");
        let started = Instant::now();
        let planned = match self.plan(&w.submit) {
            Ok(p) => p,
            Err(msg) => {
                reply_error(w.stream, &w.submit.run_id, msg);
                return;
            }
        };
        let passes = match &w.submit.mode {
            TaskMode::Engine(_) => 1,
            TaskMode::Legacy { passes, .. } => passes.len() as u32,
        };
        let n = planned.tasks.len();
        let base = self.next_task;
        self.next_task += n as u64;
        let graph_id = self.next_graph;
        self.next_graph += 1;
        log::info!("run {}: {n} tasks on {} workers", w.submit.run_id, self.workers.len());
        self.active = Some(ActiveRun {
            client: w.conn,
            stream: w.stream,
            submit: w.submit,
            graph_id,
            base,
            labels: planned.labels,
            passes,
            tasks: planned
                .tasks
                .into_iter()
                .map(|spec| TaskState {
                    spec,
                    status: Status::Pending,
                })
                .collect(),
            pending: (0..n).collect(),
            done: 0,
            merged: PartialResult::default(),
            partials: Vec::new(),
            records: Vec::new(),
            started,
            planning_bytes: planned.planning_bytes,
            retries: 0,
        });
        if n == 0 {
            self.finish_run();
        }
    }

    /// Opens every input (metadata only), validates the graph against the
    /// common schema and splits the dataset into tasks.
    fn plan(&self, submit: &Submit) -> Result<Planned, String> {
        let spec = load_spec(&submit.spec).map_err(|e| e.to_string())?;
        let mut handles: Vec<Arc<DatasetHandle>> = Vec::new();
        let mut planning_bytes = 0;
        for uri in &spec.dataset {
            let uri = resolve_uri(uri, self.cfg.data_server.as_deref());
            let r = colstore::open(&uri).map_err(|e| e.to_string())?;
            planning_bytes += r.account().bytes_read;
            handles.push(Arc::clone(r.handle()));
        }
        let refs: Vec<&DatasetHandle> = handles.iter().map(|h| h.as_ref()).collect();
        let schema = common_schema(&refs).map_err(|e| e.to_string())?;
        let graph = build(&spec, &schema).map_err(|e| e.to_string())?;
        let modes = match &submit.mode {
            TaskMode::Engine(m) => vec![m.clone()],
            TaskMode::Legacy { passes, .. } => passes.clone(),
        };
        if modes.is_empty() {
            return Err("no passes requested".into());
        }
        for m in &modes {
            m.universes(&graph).map_err(|e| e.to_string())?;
        }
        let tasks = match submit.plan {
            PlanKind::Partitioned { factor } => plan_partitions(&handles, self.workers.len(), factor),
            PlanKind::PerFile => plan_per_file(&handles),
        }
        .map_err(|e| e.to_string())?;
        Ok(Planned {
            labels: graph.universe_labels(),
            tasks,
            planning_bytes,
        })
    }

    fn dispatch(&mut self) {
        loop {
            let Some(run) = self.active.as_ref() else { return };
            let Some(&idx) = run.pending.front() else { return };
            let cap = run.submit.max_concurrent as usize;
            if cap > 0 && run.tasks.iter().filter(|t| matches!(t.status, Status::Inflight(_))).count() >= cap {
                return;
            }
            let free = self
                .workers
                .iter()
                .map(|(c, w)| ((w.slots as usize).saturating_sub(w.inflight.len()), *c))
                .filter(|(f, _)| *f > 0)
                .max_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
            let Some((_, conn)) = free else { return };
            let (graph_id, wire, msg_task, spec_text) = {
                let t = &run.tasks[idx];
                let wire = run.base + idx as u64;
                (
                    run.graph_id,
                    wire,
                    Message::Task {
                        task_id: wire,
                        graph_id: run.graph_id,
                        range: t.spec.range.clone(),
                        mode: run.submit.mode.clone(),
                        attempt: t.spec.attempt,
                    },
                    run.submit.spec.clone(),
                )
            };
            let w = self.workers.get_mut(&conn).expect("chosen worker exists");
            let mut sent = Ok(());
            if !w.graphs.contains(&graph_id) {
                sent = write_message(&mut w.stream, &Message::Graph { graph_id, spec: spec_text });
                if sent.is_ok() {
                    w.graphs.insert(graph_id);
                }
            }
            if sent.is_ok() {
                sent = write_message(&mut w.stream, &msg_task);
            }
            if sent.is_err() {
                self.lose_worker(conn, "write failed");
                continue;
            }
            w.inflight.insert(wire);
            let name = w.name.clone();
            let run = self.active.as_mut().expect("active run");
            run.pending.pop_front();
            run.tasks[idx].status = Status::Inflight(conn);
            let attempt = run.tasks[idx].spec.attempt;
            self.log(&name, idx as u64, attempt, LogKind::Dispatch);
        }
    }

    fn finish_run(&mut self) {
        let Some(mut run) = self.active.take() else { return };
        run.merged.results.sort_by_labels(&run.labels);
        run.records.sort_by_key(|r| r.id.parse::<u64>().unwrap_or(u64::MAX));
        run.partials.sort_by_key(|p| p.0);
        let complete = Complete {
            run_id: run.submit.run_id.clone(),
            error: String::new(),
            merged: run.merged,
            partials: run.partials,
            records: run.records,
            wall_time: run.started.elapsed().as_secs_f64(),
            planning_bytes: run.planning_bytes,
            retries: run.retries,
        };
        log::info!("run {} complete in {:.3}s", complete.run_id, complete.wall_time);
        self.stats.runs.fetch_add(1, Ordering::Relaxed);
        let _ = write_message(&mut run.stream, &Message::Complete(Box::new(complete)));
    }

    fn fail_run(&mut self, error: String) {
        let Some(run) = self.active.take() else { return };
        log::warn!("run {} failed: {error}", run.submit.run_id);
        reply_error(run.stream, &run.submit.run_id, error);
    }
}

fn run_finished(run: Option<&ActiveRun>) -> bool {
    run.is_some_and(|r| r.done == r.tasks.len())
}

fn reply_error(mut stream: TcpStream, run_id: &str, error: String) {
    let complete = Complete {
        run_id: run_id.to_string(),
        error,
        merged: PartialResult::default(),
        partials: Vec::new(),
        records: Vec::new(),
        wall_time: 0.0,
        planning_bytes: 0,
        retries: 0,
    };
    let _ = write_message(&mut stream, &Message::Complete(Box::new(complete)));
}
