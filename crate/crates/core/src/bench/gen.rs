//! Seeded synthetic event files with the fixed six-column schema.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::colstore::{write_dataset, ColumnData};

use super::BenchError;

pub const MANIFEST: &str = "manifest.json";
pub const PAYLOAD: &str = "payload.bin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_files: usize,
    pub events_per_file: usize,
    pub cluster_size: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_files: 8,
            events_per_file: 100_000,
            cluster_size: 10_000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub path: String,
    pub entries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GenConfig,
    pub files: Vec<ManifestEntry>,
    pub total_entries: u64,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest, BenchError> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| BenchError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| BenchError::Invalid(format!("{}: {e}", path.display())))
    }

    pub fn paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.files.iter().map(|f| dir.join(&f.path)).collect()
    }
}

fn file_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Columns of one synthetic file. Weights are multiples of 1/8; jet
/// multiplicity is uniform in 0..=8 with pT sorted descending.
pub fn generate_columns(events: usize, seed: u64) -> Vec<(String, ColumnData)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let met_dist = Exp::new(1.0 / 35.0).expect("positive rate");
    let pt_dist = Exp::new(1.0 / 45.0).expect("positive rate");
    let mut w = Vec::with_capacity(events);
    let mut met = Vec::with_capacity(events);
    let mut njet = Vec::with_capacity(events);
    let (mut pt, mut eta, mut phi) = (Vec::with_capacity(events), Vec::with_capacity(events), Vec::with_capacity(events));
    for _ in 0..events {
        w.push(f64::from(rng.random_range(4u32..=12)) / 8.0);
        met.push(met_dist.sample(&mut rng));
        let n = rng.random_range(0usize..=8);
        njet.push(n as i64);
        let mut p: Vec<f64> = (0..n).map(|_| 20.0 + pt_dist.sample(&mut rng)).collect();
        p.sort_by(|a, b| b.total_cmp(a));
        pt.push(p);
        eta.push((0..n).map(|_| rng.random_range(-4.7..4.7)).collect::<Vec<f64>>());
        phi.push((0..n).map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI)).collect::<Vec<f64>>());
    }
    vec![
        ("event_weight".into(), ColumnData::F64(w)),
        ("MET_pt".into(), ColumnData::F64(met)),
        ("nJet".into(), ColumnData::I64(njet)),
        ("Jet_pt".into(), ColumnData::vec_f64(pt)),
        ("Jet_eta".into(), ColumnData::vec_f64(eta)),
        ("Jet_phi".into(), ColumnData::vec_f64(phi)),
    ]
}

/// Writes `data_NNN.col` files and a manifest into `out_dir`.
pub fn gen(cfg: &GenConfig, out_dir: &Path) -> Result<Manifest, BenchError> {
    if cfg.n_files == 0 || cfg.cluster_size == 0 {
        return Err(BenchError::Invalid("n_files and cluster_size must be at least 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;
    let mut files = Vec::with_capacity(cfg.n_files);
    for i in 0..cfg.n_files {
        let name = format!("data_{i:03}.col");
        let cols = generate_columns(cfg.events_per_file, file_seed(cfg.seed, i));
        write_dataset(&out_dir.join(&name), &cols, cfg.cluster_size)?;
        files.push(ManifestEntry {
            path: name,
            entries: cfg.events_per_file as u64,
        });
    }
    let manifest = Manifest {
        config: cfg.clone(),
        total_entries: files.iter().map(|f| f.entries).sum(),
        files,
    };
    let path = out_dir.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| BenchError::io(&path, e))?;
    Ok(manifest)
}

/// Deterministic filler the legacy jobs download before running.
pub fn write_payload(dir: &Path, bytes: u64) -> Result<PathBuf, BenchError> {
    let path = dir.join(PAYLOAD);
    if fs::metadata(&path).is_ok_and(|m| m.len() >= bytes) {
        return Ok(path);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(bytes);
    let mut data = vec![0u8; bytes as usize];
    rng.fill_bytes(&mut data);
    fs::write(&path, data).map_err(|e| BenchError::io(&path, e))?;
    Ok(path)
}
