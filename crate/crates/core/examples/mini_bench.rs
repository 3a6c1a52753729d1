//! Generates a small dataset and runs the four benchmark scenarios on a
//! local facility with thread workers.

use colflow::bench::{bench, gen, BenchConfig, FacilityConfig, GenConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = tempfile::tempdir()?;
    let out = tempfile::tempdir()?;
    gen(
        &GenConfig {
            n_files: 4,
            events_per_file: 20_000,
            cluster_size: 5_000,
            seed: 1,
        },
        data.path(),
    )?;
    let rep = bench(&BenchConfig {
        data_dir: data.path().to_path_buf(),
        out_dir: out.path().to_path_buf(),
        facility: FacilityConfig {
            workers: 2,
            slots: 2,
            worker_exe: None,
        },
        repeats: 2,
        payload_bytes: 512 * 1024,
        ..Default::default()
    })?;
    print!("{}", rep.table);
    println!("max legacy/new difference: {:e}", rep.max_mode_diff);
    for o in &rep.outcomes {
        println!(
            "{} {:<6} {:<4} served {:>9} read {:>9} chunks {:>9}",
            o.run_id, o.mode, o.phase, o.served_bytes, o.metrics.network_read, o.chunk_bytes
        );
    }
    Ok(())
}
