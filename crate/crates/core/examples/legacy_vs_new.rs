//! Runs the per-file multi-pass baseline and the single-pass distributed
//! run on the same files and compares results and bytes.

use std::time::Duration;

use colflow::bench::{default_post_spec, gen, write_payload, Facility, FacilityConfig, GenConfig, Manifest};
use colflow::cluster::{submit, RunOptions};
use colflow::legacy::{legacy_passes, run_legacy_postselection, LegacyConfig, Phase};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = tempfile::tempdir()?;
    let out = tempfile::tempdir()?;
    let cfg = GenConfig {
        n_files: 4,
        events_per_file: 10_000,
        cluster_size: 2_500,
        seed: 5,
    };
    gen(&cfg, data.path())?;
    let payload = write_payload(data.path(), 256 * 1024)?;
    let facility = Facility::start(
        data.path(),
        &FacilityConfig {
            workers: 2,
            slots: 2,
            worker_exe: None,
        },
    )?;
    let uris = Manifest::load(data.path())?
        .paths(data.path())
        .iter()
        .map(|p| facility.uri(p))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = default_post_spec(&uris);
    println!("legacy passes per job: {:?}", legacy_passes(&spec, Phase::Postselection));

    let legacy = run_legacy_postselection(
        &spec,
        &LegacyConfig {
            scheduler: facility.scheduler_addr(),
            payload_uri: facility.uri(&payload)?,
            payload_bytes: 256 * 1024,
            parallel_jobs: 0,
            min_workers: 2,
            out_dir: out.path().to_path_buf(),
            run_id: "demo".into(),
        },
    )?;
    let new = submit(
        &facility.scheduler_addr(),
        &spec.to_json(),
        &RunOptions {
            min_workers: 2,
            timeout: Some(Duration::from_secs(60)),
            ..Default::default()
        },
    )?;
    let new_chunks: u64 = new.records.iter().map(|r| r.chunk_bytes).sum();
    println!(
        "legacy: {} jobs, {:.3}s jobs + {:.3}s merge, {} chunk bytes, {} bytes total",
        legacy.records.len(),
        legacy.jobs_time,
        legacy.merge_time,
        legacy.chunk_bytes(),
        legacy.network_read()
    );
    println!(
        "new:    {} tasks, {:.3}s, {} chunk bytes, {} bytes total",
        new.records.len(),
        new.wall_time,
        new_chunks,
        new.network_read()
    );
    println!("chunk byte ratio: {}", legacy.chunk_bytes() as f64 / new_chunks as f64);
    println!("max relative difference: {:?}", legacy.merged.max_relative_diff(&new.merged.results));
    println!("result files: {}", legacy.result_files.len());
    Ok(())
}
