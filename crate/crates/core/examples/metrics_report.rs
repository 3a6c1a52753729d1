//! Computes job rates from records and renders a comparison table from
//! metrics rows.

use colflow::bench::{build_report, render};
use colflow::metrics::{aggregate, job_rate, JobRecord, MetricsRow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let records = vec![
        JobRecord {
            id: "0".into(),
            events: 100,
            t_total: 2.0,
            t_loop: 1.5,
            ..Default::default()
        },
        JobRecord {
            id: "1".into(),
            events: 200,
            t_total: 3.0,
            t_loop: 2.5,
            ..Default::default()
        },
    ];
    println!("job rate {} Hz, event-loop rate {} Hz", job_rate(&records, false)?, job_rate(&records, true)?);
    let m = aggregate(&records, 3.2, 0)?;
    println!("overall rate over 3.2s wall: {:.2} Hz", m.overall_rate);

    let mut rows = Vec::new();
    for (run, jitter) in [("r0", 0.0), ("r1", 2.0), ("r2", -1.0)] {
        for (mode, phase, seconds, bytes) in [
            ("legacy", "pre", 600.0, 4_800_000_000u64),
            ("new", "pre", 80.0, 3_500_000_000),
            ("legacy", "post", 170.0, 840_000_000),
            ("new", "post", 43.0, 175_000_000),
        ] {
            let t = seconds + jitter;
            rows.push(MetricsRow {
                run_id: run.into(),
                mode: mode.into(),
                phase: phase.into(),
                overall_time_s: t,
                overall_rate_hz: 4.0e7 / t,
                job_rate_hz: 3.0e7 / t,
                job_loop_rate_hz: 3.3e7 / t,
                network_read_bytes: bytes,
                total_events: 40_000_000,
                n_jobs: 100,
            });
        }
    }
    print!("{}", render(&build_report(&rows, &[])?));
    Ok(())
}
