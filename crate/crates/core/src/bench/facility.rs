//! Self-hosted mini-facility on localhost: data server, scheduler and N
//! workers, either child processes or in-process threads.

use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use crate::cluster::{spawn_worker, start_scheduler, SchedulerConfig, SchedulerHandle, WorkerConfig, WorkerHandle};
use crate::colstore::{serve, DataServer};

use super::BenchError;

#[derive(Debug, Clone)]
pub struct FacilityConfig {
    pub workers: usize,
    pub slots: u32,
    /// `colflow` executable for process workers; threads when unset.
    pub worker_exe: Option<PathBuf>,
}

impl Default for FacilityConfig {
    fn default() -> Self {
        FacilityConfig {
            workers: 4,
            slots: 1,
            worker_exe: None,
        }
    }
}

enum Worker {
    Thread(WorkerHandle),
    Process(Child),
}

pub struct Facility {
    server: DataServer,
    scheduler: Option<SchedulerHandle>,
    workers: Vec<Worker>,
    root: PathBuf,
}

impl Facility {
    /// Serves `root` and starts the scheduler and workers.
    pub fn start(root: &Path, cfg: &FacilityConfig) -> Result<Facility, BenchError> {
        if cfg.workers == 0 {
            return Err(BenchError::Invalid("at least one worker is required".into()));
        }
        let root = root.canonicalize().map_err(|e| BenchError::io(root, e))?;
        let server = serve(&root, "127.0.0.1:0").map_err(|e| BenchError::io(&root, e))?;
        let scheduler = start_scheduler("127.0.0.1:0", SchedulerConfig::default()).map_err(|e| BenchError::io(&root, e))?;
        let addr = scheduler.local_addr().to_string();
        let mut workers = Vec::with_capacity(cfg.workers);
        for i in 0..cfg.workers {
            let name = format!("w{i}");
            let w = match &cfg.worker_exe {
                Some(exe) => Worker::Process(
                    Command::new(exe)
                        .args(["worker", "--scheduler", &addr, "--slots", &cfg.slots.to_string(), "--name", &name])
                        .stdin(Stdio::null())
                        .spawn()
                        .map_err(|e| BenchError::io(exe, e))?,
                ),
                None => Worker::Thread(
                    spawn_worker(
                        &addr,
                        WorkerConfig {
                            name,
                            slots: cfg.slots,
                            ..Default::default()
                        },
                    )
                    .map_err(|e| BenchError::Invalid(e.to_string()))?,
                ),
            };
            workers.push(w);
        }
        Ok(Facility {
            server,
            scheduler: Some(scheduler),
            workers,
            root,
        })
    }

    pub fn scheduler_addr(&self) -> String {
        self.scheduler.as_ref().expect("running").local_addr().to_string()
    }

    pub fn scheduler(&self) -> &SchedulerHandle {
        self.scheduler.as_ref().expect("running")
    }

    pub fn server(&self) -> &DataServer {
        &self.server
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }

    /// Data-server URI of a path under the served root.
    pub fn uri(&self, path: &Path) -> Result<String, BenchError> {
        let canonical = path.canonicalize().map_err(|e| BenchError::io(path, e))?;
        let rel = canonical
            .strip_prefix(&self.root)
            .map_err(|_| BenchError::Invalid(format!("{} is outside the served root", path.display())))?;
        Ok(self.server.uri_for(&rel.to_string_lossy()))
    }

    /// Kills worker `i` abruptly.
    pub fn kill_worker(&mut self, i: usize) {
        if i >= self.workers.len() {
            return;
        }
        match self.workers.remove(i) {
            Worker::Thread(h) => h.kill(),
            Worker::Process(mut c) => {
                let _ = c.kill();
                let _ = c.wait();
            }
        }
    }
}

impl Drop for Facility {
    fn drop(&mut self) {
        if let Some(s) = self.scheduler.take() {
            s.shutdown();
        }
        for w in self.workers.drain(..) {
            match w {
                Worker::Thread(h) => {
                    let _ = h.join();
                }
                Worker::Process(mut c) => {
                    let deadline = Instant::now() + Duration::from_secs(3);
                    while Instant::now() < deadline {
                        if let Ok(Some(_)) = c.try_wait() {
                            break;
                        }
                        thread::sleep(Duration::from_millis(20));
                    }
                    let _ = c.kill();
                    let _ = c.wait();
                }
            }
        }
        self.server.shutdown();
    }
}
