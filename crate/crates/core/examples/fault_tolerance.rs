//! Kills one of three workers in the middle of a run; its tasks are
//! retried elsewhere and the result is unchanged.

use std::thread;
use std::time::Duration;

use colflow::bench::{default_post_spec, generate_columns};
use colflow::cluster::{spawn_worker, start_scheduler, submit, LogKind, RunOptions, SchedulerConfig, WorkerConfig};
use colflow::colstore::{open, write_dataset};
use colflow::engine::run_local;
use colflow::graph::build;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut files = Vec::new();
    for i in 0..3 {
        let p = dir.path().join(format!("f{i}.col"));
        write_dataset(&p, &generate_columns(6_000, i), 1_000)?;
        files.push(p.to_string_lossy().into_owned());
    }
    let spec = default_post_spec(&files);
    let sched = start_scheduler("127.0.0.1:0", SchedulerConfig::default())?;
    let addr = sched.local_addr().to_string();
    let mut workers: Vec<_> = (0..3)
        .map(|i| {
            spawn_worker(
                &addr,
                WorkerConfig {
                    name: format!("w{i}"),
                    task_delay: Duration::from_millis(200),
                    ..Default::default()
                },
            )
        })
        .collect::<Result<_, _>>()?;

    let run = {
        let (addr, doc) = (addr.clone(), spec.to_json());
        thread::spawn(move || {
            submit(
                &addr,
                &doc,
                &RunOptions {
                    min_workers: 3,
                    ..Default::default()
                },
            )
        })
    };
    thread::sleep(Duration::from_millis(300));
    println!("killing w0");
    workers.remove(0).kill();
    let res = run.join().expect("submit thread")?;

    for e in sched.stats().log() {
        if e.kind != LogKind::Dispatch || e.attempt > 1 {
            println!("{:>8.3}s {:<3} task {:>2} attempt {} {:?}", e.at.as_secs_f64(), e.worker, e.task, e.attempt, e.kind);
        }
    }
    let graph = build(&spec, &open(&files[0])?.handle().schema)?;
    let reference = run_local(&graph, &files, 1)?;
    println!(
        "{} tasks done, {} retried, {} worker(s) lost, result unchanged: {}",
        res.records.len(),
        res.retries,
        sched.stats().workers_lost(),
        reference.results == res.merged.results
    );
    sched.shutdown();
    for w in workers {
        let _ = w.join();
    }
    Ok(())
}
