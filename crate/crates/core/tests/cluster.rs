mod common;

use std::io::BufReader;
use std::net::{TcpListener, TcpStream};
use std::time::Duration;

use colflow::cluster::{
    execute_task, spawn_worker, start_scheduler, submit, ClusterError, RunOptions, SchedulerConfig,
    SchedulerHandle, WorkerConfig, WorkerHandle,
};
use colflow::colstore;
use colflow::engine::{run_local, EntryRange, Mode};
use colflow::graph::{build, load_spec};
use colflow::proto::{read_message, write_message, Message, PlanKind, TaskMode};
use common::*;

struct Setup {
    dir: tempfile::TempDir,
    files: Vec<String>,
}

fn setup(events: &[usize], cluster: usize) -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let files = events
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let p = dir.path().join(format!("d{i}.col"));
            write_fixture(&p, *n, cluster, 7 + i as u64);
            p.to_string_lossy().into_owned()
        })
        .collect();
    Setup { dir, files }
}

fn scheduler() -> SchedulerHandle {
    start_scheduler("127.0.0.1:0", SchedulerConfig::default()).unwrap()
}

fn workers(s: &SchedulerHandle, n: usize, slots: u32, delay_ms: u64) -> Vec<WorkerHandle> {
    (0..n)
        .map(|i| {
            spawn_worker(
                &s.local_addr().to_string(),
                WorkerConfig {
                    name: format!("w{i}"),
                    slots,
                    task_delay: Duration::from_millis(delay_ms),
                    ..Default::default()
                },
            )
            .unwrap()
        })
        .collect()
}

fn opts(factor: u32, min_workers: u32) -> RunOptions {
    RunOptions {
        plan: PlanKind::Partitioned { factor },
        min_workers,
        timeout: Some(Duration::from_secs(120)),
        ..Default::default()
    }
}

fn local_reference(files: &[String]) -> colflow::engine::ResultSet {
    let spec = load_spec(&fixture_spec(files)).unwrap();
    let schema = colstore::open(&files[0]).unwrap().handle().schema.clone();
    run_local(&build(&spec, &schema).unwrap(), files, 1).unwrap().results
}

#[test]
fn distributed_equals_local_across_factors_and_workers() {
    let s = setup(&[900, 500, 0, 300], 50);
    let reference = local_reference(&s.files);
    let doc = fixture_spec(&s.files);
    for nworkers in [1usize, 3] {
        let sched = scheduler();
        let _w = workers(&sched, nworkers, 2, 0);
        for factor in [1u32, 3, 10] {
            let r = submit(&sched.local_addr().to_string(), &doc, &opts(factor, nworkers as u32)).unwrap();
            assert_eq!(r.merged.results, reference, "workers {nworkers} factor {factor}");
            assert_eq!(r.merged.events_processed, 1700);
            // 34 clusters over three non-empty files
            let expected_tasks = (factor as usize * nworkers).clamp(3, 34);
            assert_eq!(r.records.len(), expected_tasks);
            assert_eq!(r.records.iter().map(|x| x.events).sum::<u64>(), 1700);
            assert_eq!(r.retries, 0);
            for rec in &r.records {
                assert!(rec.t_loop <= rec.t_total);
            }
        }
        sched.shutdown();
    }
}

#[test]
fn two_slots_never_hold_more_than_two_tasks() {
    let s = setup(&[400], 50);
    let sched = scheduler();
    let _w = workers(&sched, 1, 2, 150);
    let r = submit(&sched.local_addr().to_string(), &fixture_spec(&s.files), &opts(4, 1)).unwrap();
    assert_eq!(r.records.len(), 4);
    assert_eq!(sched.stats().max_inflight("w0"), 2);
}

#[test]
fn register_then_shutdown_exits_cleanly() {
    let sched = scheduler();
    let w = workers(&sched, 1, 1, 0).pop().unwrap();
    std::thread::sleep(Duration::from_millis(100));
    sched.shutdown();
    assert!(w.join().is_ok());
}

#[test]
fn worker_survives_a_failing_task() {
    let s = setup(&[100], 50);
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let w = spawn_worker(&addr, WorkerConfig::default()).unwrap();
    let (mut conn, _) = listener.accept().unwrap();
    let mut reader = BufReader::new(conn.try_clone().unwrap());
    assert!(matches!(read_message(&mut reader).unwrap(), Some(Message::Register { .. })));
    let spec = fixture_spec(&s.files);
    write_message(&mut conn, &Message::Graph { graph_id: 1, spec }).unwrap();
    let task = |id, end| Message::Task {
        task_id: id,
        graph_id: 1,
        range: EntryRange::new(s.files[0].clone(), 0, end),
        mode: TaskMode::Engine(Mode::SinglePass),
        attempt: 1,
    };
    write_message(&mut conn, &task(1, 5000)).unwrap();
    let reply = loop {
        match read_message(&mut reader).unwrap().unwrap() {
            Message::Heartbeat { .. } => continue,
            m => break m,
        }
    };
    match reply {
        Message::Fail { task_id, error } => {
            assert_eq!(task_id, 1);
            assert!(!error.is_empty());
        }
        other => panic!("expected FAIL, got {other:?}"),
    }
    write_message(&mut conn, &task(2, 100)).unwrap();
    let reply = loop {
        match read_message(&mut reader).unwrap().unwrap() {
            Message::Heartbeat { .. } => continue,
            m => break m,
        }
    };
    assert!(matches!(reply, Message::Result { task_id: 2, .. }));
    write_message(&mut conn, &Message::Shutdown).unwrap();
    assert!(w.join().is_ok());
}

#[test]
fn killed_worker_tasks_are_retried() {
    let s = setup(&[600, 600], 50);
    let reference = local_reference(&s.files);
    let sched = scheduler();
    let mut ws = workers(&sched, 3, 1, 200);
    let addr = sched.local_addr().to_string();
    let doc = fixture_spec(&s.files);
    let client = std::thread::spawn(move || submit(&addr, &doc, &opts(3, 3)));
    // wait until the victim holds a task
    let stats = sched.stats().clone();
    while stats.log().iter().all(|e| e.worker != "w1") {
        std::thread::sleep(Duration::from_millis(5));
    }
    ws.remove(1).kill();
    let r = client.join().unwrap().unwrap();
    assert_eq!(r.merged.results, reference);
    assert_eq!(r.merged.events_processed, 1200);
    assert_eq!(stats.workers_lost(), 1);
    assert!(r.retries >= 1);
    assert!(r.records.iter().all(|x| x.attempt <= 3 && x.worker != "w1"));
    let mut ids: Vec<_> = r.records.iter().map(|x| x.id.clone()).collect();
    ids.dedup();
    assert_eq!(ids.len(), 9, "each task completed exactly once");
}

#[test]
fn silent_worker_is_declared_lost() {
    let s = setup(&[300], 50);
    let reference = local_reference(&s.files);
    let cfg = SchedulerConfig {
        heartbeat_interval: Duration::from_millis(100),
        loss_timeout: Duration::from_millis(300),
        ..Default::default()
    };
    let sched = start_scheduler("127.0.0.1:0", cfg).unwrap();
    let addr = sched.local_addr().to_string();
    // registers, accepts tasks, never speaks again
    let mut mute = TcpStream::connect(&addr).unwrap();
    write_message(&mut mute, &Message::Register { worker: "mute".into(), slots: 4 }).unwrap();
    std::thread::sleep(Duration::from_millis(50));
    let _real = spawn_worker(
        &addr,
        WorkerConfig {
            name: "real".into(),
            heartbeat: Duration::from_millis(50),
            ..Default::default()
        },
    )
    .unwrap();
    let r = submit(&addr, &fixture_spec(&s.files), &opts(3, 2)).unwrap();
    assert_eq!(r.merged.results, reference);
    assert_eq!(sched.stats().workers_lost(), 1);
    assert!(r.records.iter().all(|x| x.worker == "real"));
}

#[test]
fn duplicate_results_are_discarded() {
    let s = setup(&[300], 50);
    let reference = local_reference(&s.files);
    let sched = scheduler();
    let addr = sched.local_addr().to_string();
    let fake = std::thread::spawn({
        let addr = addr.clone();
        move || {
            let mut conn = TcpStream::connect(&addr).unwrap();
            write_message(&mut conn, &Message::Register { worker: "dup".into(), slots: 1 }).unwrap();
            let mut reader = BufReader::new(conn.try_clone().unwrap());
            let mut spec = None;
            while let Ok(Some(m)) = read_message(&mut reader) {
                match m {
                    Message::Graph { spec: s, .. } => spec = Some(load_spec(&s).unwrap()),
                    Message::Task { task_id, range, mode, .. } => {
                        let out = execute_task(spec.as_ref().unwrap(), &range, &mode, "x", None).unwrap();
                        let msg = Message::Result {
                            task_id,
                            t_total: out.t_total,
                            partial: out.partial,
                        };
                        write_message(&mut conn, &msg).unwrap();
                        write_message(&mut conn, &msg).unwrap();
                    }
                    Message::Shutdown => return,
                    _ => {}
                }
            }
        }
    });
    let r = submit(&addr, &fixture_spec(&s.files), &opts(3, 1)).unwrap();
    assert_eq!(r.merged.results, reference);
    assert_eq!(r.merged.events_processed, 300);
    std::thread::sleep(Duration::from_millis(100));
    assert_eq!(sched.stats().duplicates_discarded(), 2);
    sched.shutdown();
    fake.join().unwrap();
}

#[test]
fn persistent_failure_exhausts_retries() {
    let s = setup(&[200], 50);
    let sched = scheduler();
    let _w = workers(&sched, 2, 1, 0);
    let doc = format!(
        r#"{{"dataset": {}, "stages": [{{"op":"define","name":"j","expr":"Jet_pt[0]"}},{{"op":"sum","name":"s","column":"j"}}]}}"#,
        serde_json::to_string(&s.files).unwrap()
    );
    let err = submit(&sched.local_addr().to_string(), &doc, &opts(1, 2)).unwrap_err();
    match err {
        ClusterError::RunFailed(msg) => assert!(msg.contains("after 3 attempts"), "{msg}"),
        other => panic!("{other}"),
    }
    let bad = r#"{"dataset": ["/nonexistent/x.col"], "stages": [{"op":"count","name":"n"}]}"#;
    assert!(matches!(
        submit(&sched.local_addr().to_string(), bad, &opts(1, 1)),
        Err(ClusterError::RunFailed(_))
    ));
    // the scheduler keeps serving after failed runs
    let ok = submit(&sched.local_addr().to_string(), &fixture_spec(&s.files), &opts(1, 1)).unwrap();
    assert_eq!(ok.merged.events_processed, 200);
}

#[test]
fn network_read_matches_data_server() {
    let s = setup(&[500, 300], 64);
    let server = colstore::serve(s.dir.path(), "127.0.0.1:0").unwrap();
    let remote: Vec<String> = (0..2).map(|i| server.uri_for(&format!("d{i}.col"))).collect();
    let reference = local_reference(&s.files);
    let sched = scheduler();
    let _w = workers(&sched, 2, 2, 0);
    let before = server.stats().bytes_served();
    let r = submit(&sched.local_addr().to_string(), &fixture_spec(&remote), &opts(3, 2)).unwrap();
    let served = server.stats().bytes_served() - before;
    assert_eq!(r.network_read(), served);
    assert!(r.planning_bytes > 0);
    assert_eq!(r.merged.results, reference);
    let m = r.metrics().unwrap();
    assert!(m.job_loop_rate >= m.job_rate);
}
