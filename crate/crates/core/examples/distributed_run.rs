//! Starts a data server, a scheduler and three workers in-process, submits
//! a pipeline over remote files and compares with a local run.

use std::time::Duration;

use colflow::bench::{default_post_spec, generate_columns};
use colflow::cluster::{spawn_worker, start_scheduler, submit, RunOptions, SchedulerConfig, WorkerConfig};
use colflow::colstore::{open, serve, write_dataset};
use colflow::engine::run_local;
use colflow::graph::build;
use colflow::proto::PlanKind;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    for i in 0..4 {
        write_dataset(dir.path().join(format!("d{i}.col")), &generate_columns(25_000, 100 + i), 5_000)?;
    }
    let mut server = serve(dir.path(), "127.0.0.1:0")?;
    let uris: Vec<String> = (0..4).map(|i| server.uri_for(&format!("d{i}.col"))).collect();
    let sched = start_scheduler("127.0.0.1:0", SchedulerConfig::default())?;
    let addr = sched.local_addr().to_string();
    let workers: Vec<_> = (0..3)
        .map(|i| {
            spawn_worker(
                &addr,
                WorkerConfig {
                    name: format!("w{i}"),
                    slots: 2,
                    ..Default::default()
                },
            )
        })
        .collect::<Result<_, _>>()?;

    let spec = default_post_spec(&uris);
    let before = server.stats().bytes_served();
    let res = submit(
        &addr,
        &spec.to_json(),
        &RunOptions {
            plan: PlanKind::Partitioned { factor: 3 },
            min_workers: 3,
            timeout: Some(Duration::from_secs(60)),
            ..Default::default()
        },
    )?;
    let m = res.metrics()?;
    println!(
        "{} tasks, {} events, {:.3}s wall, job rate {:.0} Hz, loop rate {:.0} Hz",
        res.records.len(),
        m.total_events,
        m.overall_time,
        m.job_rate,
        m.job_loop_rate
    );
    for r in &res.records {
        println!("  task {:>2} on {} : {} events, {} bytes", r.id, r.worker, r.events, r.bytes_read);
    }
    println!(
        "client network read {} bytes, server sent {}",
        res.network_read(),
        server.stats().bytes_served() - before
    );

    let graph = build(&spec, &open(&uris[0])?.handle().schema)?;
    let local = run_local(&graph, &uris, 1)?;
    println!("identical to local run: {}", local.results == res.merged.results);

    sched.shutdown();
    for w in workers {
        let _ = w.join();
    }
    server.shutdown();
    Ok(())
}
