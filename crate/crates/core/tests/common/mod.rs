//! Shared fixtures and the brute-force reference evaluator used by the
//! integration tests.
#![allow(dead_code)]

use std::path::Path;

use colflow::colstore::{write_dataset, ColumnData};
use colflow::exprlang::{MapContext, Value};
use colflow::graph::{PipelineSpec, Stage, NOMINAL};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Writes a small random file with the standard six-column schema. Weights
/// are multiples of 1/8 so every sum in the tests is exact.
pub fn write_fixture(path: &Path, events: usize, cluster_size: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Vec::new();
    let mut met = Vec::new();
    let mut njet = Vec::new();
    let (mut pt, mut eta, mut phi) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..events {
        w.push(f64::from(rng.random_range(4u32..=12)) / 8.0);
        met.push(rng.random_range(0.0..120.0));
        let n = rng.random_range(0usize..=5);
        njet.push(n as i64);
        pt.push((0..n).map(|_| rng.random_range(15.0..200.0)).collect::<Vec<f64>>());
        eta.push((0..n).map(|_| rng.random_range(-4.0..4.0)).collect::<Vec<f64>>());
        phi.push((0..n).map(|_| rng.random_range(-3.14..3.14)).collect::<Vec<f64>>());
    }
    let cols = vec![
        ("event_weight".to_string(), ColumnData::F64(w)),
        ("MET_pt".to_string(), ColumnData::F64(met)),
        ("nJet".to_string(), ColumnData::I64(njet)),
        ("Jet_pt".to_string(), ColumnData::vec_f64(pt)),
        ("Jet_eta".to_string(), ColumnData::vec_f64(eta)),
        ("Jet_phi".to_string(), ColumnData::vec_f64(phi)),
    ];
    write_dataset(path, &cols, cluster_size).unwrap();
}

/// Pipeline exercising define, filter, both variation kinds, vector fills,
/// sums and counts.
pub fn fixture_spec(files: &[String]) -> String {
    let dataset = serde_json::to_string(files).unwrap();
    format!(
        r#"{{
  "dataset": {dataset},
  "stages": [
    {{"op": "vary", "column": "Jet_pt", "kind": "topology", "tags": ["jesUp", "jesDown"],
      "exprs": ["Jet_pt * 1.0625", "Jet_pt * 0.9375"]}},
    {{"op": "vary", "column": "MET_pt", "kind": "topology", "tags": ["metUp"], "exprs": ["MET_pt + 8.0"]}},
    {{"op": "vary", "column": "event_weight", "kind": "weight", "tags": ["wUp", "wDown"],
      "exprs": ["event_weight * 1.25", "event_weight * 0.75"]}},
    {{"op": "define", "name": "good_pt", "expr": "where(Jet_pt, abs(Jet_eta) < 2.4)"}},
    {{"op": "define", "name": "ht", "expr": "sum(good_pt)"}},
    {{"op": "count", "name": "n_all"}},
    {{"op": "filter", "expr": "len(good_pt) >= 1", "label": "one_jet"}},
    {{"op": "define", "name": "lead", "expr": "max(good_pt)"}},
    {{"op": "filter", "expr": "MET_pt > 20 || ht > 150", "label": "met_or_ht"}},
    {{"op": "histo1d", "name": "h_ht", "column": "ht", "weight": "event_weight", "nbins": 20, "xmin": 0, "xmax": 600}},
    {{"op": "histo1d", "name": "h_met", "column": "MET_pt", "weight": "event_weight", "nbins": 12, "xmin": 0, "xmax": 120}},
    {{"op": "histo1d", "name": "h_lead", "column": "lead", "nbins": 10, "xmin": 0, "xmax": 200}},
    {{"op": "histo1d", "name": "h_jets", "column": "good_pt", "nbins": 10, "xmin": 0, "xmax": 200}},
    {{"op": "sum", "name": "sum_w", "column": "event_weight"}},
    {{"op": "count", "name": "n_sel"}}
  ]
}}"#
    )
}

/// Oracle histogram: bins and sums kept independently of the library.
#[derive(Debug, Clone, PartialEq)]
pub struct RefHist {
    pub nbins: usize,
    pub xmin: f64,
    pub xmax: f64,
    pub sumw: Vec<f64>,
    pub sumw2: Vec<f64>,
    pub entries: u64,
}

impl RefHist {
    fn fill(&mut self, x: f64, w: f64) {
        let b = if x.is_nan() || x < self.xmin {
            0
        } else if x >= self.xmax {
            self.nbins + 1
        } else {
            let f = (x - self.xmin) / (self.xmax - self.xmin) * self.nbins as f64;
            (f.floor() as usize).min(self.nbins - 1) + 1
        };
        self.sumw[b] += w;
        self.sumw2[b] += w * w;
        self.entries += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RefResult {
    Hist(RefHist),
    Scalar(f64),
}

/// Per universe, per result name.
pub type RefResults = Vec<(String, Vec<(String, RefResult)>)>;

fn row_value(col: &ColumnData, i: usize) -> Value<'static> {
    match col {
        ColumnData::F64(v) => Value::F64(v[i]),
        ColumnData::I64(v) => Value::I64(v[i]),
        ColumnData::Bool(v) => Value::Bool(v[i]),
        ColumnData::VecF64 { offsets, values } => values[offsets[i]..offsets[i + 1]].to_vec().into(),
        ColumnData::VecI64 { offsets, values } => values[offsets[i]..offsets[i + 1]].to_vec().into(),
    }
}

fn to_f64s(v: &Value<'_>) -> Vec<f64> {
    match v {
        Value::F64(x) => vec![*x],
        Value::I64(x) => vec![*x as f64],
        other => other.to_f64_vec().expect("numeric value"),
    }
}

/// Evaluates every universe by walking all stages for every event with the
/// variation substituted, with no sharing between universes.
pub fn oracle(spec: &PipelineSpec, columns: &[(String, ColumnData)]) -> RefResults {
    let n = columns.first().map_or(0, |c| c.1.len());
    let mut labels = vec![NOMINAL.to_string()];
    for s in &spec.stages {
        if let Stage::Vary { tags, .. } = s {
            labels.extend(tags.iter().cloned());
        }
    }
    let mut out = Vec::new();
    for label in &labels {
        let mut results: Vec<(String, RefResult)> = Vec::new();
        for s in &spec.stages {
            match s {
                Stage::Histo1D { name, nbins, xmin, xmax, .. } => results.push((
                    name.clone(),
                    RefResult::Hist(RefHist {
                        nbins: *nbins as usize,
                        xmin: *xmin,
                        xmax: *xmax,
                        sumw: vec![0.0; *nbins as usize + 2],
                        sumw2: vec![0.0; *nbins as usize + 2],
                        entries: 0,
                    }),
                )),
                Stage::Sum { name, .. } | Stage::Count { name } => {
                    results.push((name.clone(), RefResult::Scalar(0.0)))
                }
                _ => {}
            }
        }
        for i in 0..n {
            let mut ctx = MapContext::new();
            for (name, col) in columns {
                ctx.set(name.clone(), row_value(col, i));
            }
            let mut r = 0;
            for s in &spec.stages {
                match s {
                    Stage::Vary { column, tags, exprs, .. } => {
                        if let Some(k) = tags.iter().position(|t| t == label) {
                            let v = ctx.eval(&exprs[k].ast).unwrap();
                            ctx.set(column.clone(), v);
                        }
                    }
                    Stage::Define { name, expr } => {
                        let v = ctx.eval(&expr.ast).unwrap();
                        ctx.set(name.clone(), v);
                    }
                    Stage::Filter { expr, .. } => {
                        if ctx.eval(&expr.ast).unwrap().as_bool() != Some(true) {
                            break;
                        }
                    }
                    Stage::Histo1D { column, weight, .. } => {
                        let w = weight
                            .as_ref()
                            .map_or(1.0, |w| to_f64s(&ctx.eval(&colflow::exprlang::parse(w).unwrap()).unwrap())[0]);
                        let x = ctx.eval(&colflow::exprlang::parse(column).unwrap()).unwrap();
                        if let RefResult::Hist(h) = &mut results[r].1 {
                            for v in to_f64s(&x) {
                                h.fill(v, w);
                            }
                        }
                        r += 1;
                    }
                    Stage::Sum { column, .. } => {
                        let x = ctx.eval(&colflow::exprlang::parse(column).unwrap()).unwrap();
                        if let RefResult::Scalar(acc) = &mut results[r].1 {
                            for v in to_f64s(&x) {
                                *acc += v;
                            }
                        }
                        r += 1;
                    }
                    Stage::Count { .. } => {
                        if let RefResult::Scalar(acc) = &mut results[r].1 {
                            *acc += 1.0;
                        }
                        r += 1;
                    }
                    Stage::Snapshot { .. } => {}
                }
            }
        }
        out.push((label.clone(), results));
    }
    out
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Largest relative difference between engine results and the oracle.
/// Panics on structural mismatch.
pub fn max_diff_vs_oracle(engine: &colflow::engine::ResultSet, oracle: &RefResults) -> f64 {
    use colflow::hist::ResultValue;
    assert_eq!(engine.universes.len(), oracle.len(), "universe count");
    let mut worst = 0.0f64;
    for (label, results) in oracle {
        for (name, expected) in results {
            let got = engine
                .get(label, name)
                .unwrap_or_else(|| panic!("missing {label}/{name}"));
            match (got, expected) {
                (ResultValue::Histo(h), RefResult::Hist(e)) => {
                    assert_eq!(h.entries(), e.entries, "{label}/{name} entries");
                    for (a, b) in h.sumw().iter().zip(&e.sumw).chain(h.sumw2().iter().zip(&e.sumw2)) {
                        worst = worst.max(rel(*a, *b));
                    }
                }
                (ResultValue::Scalar(s), RefResult::Scalar(e)) => worst = worst.max(rel(s.value, *e)),
                _ => panic!("{label}/{name}: kind mismatch"),
            }
        }
    }
    worst
}

/// Reads every column of the given files, concatenated in order.
pub fn read_all_columns(files: &[String]) -> Vec<(String, ColumnData)> {
    let mut all: Vec<(String, ColumnData)> = Vec::new();
    for f in files {
        let mut r = colflow::colstore::open(f).unwrap();
        let names: Vec<String> = r.handle().schema.iter().map(|c| c.name.clone()).collect();
        let batch = r.read_all(&names).unwrap();
        if all.is_empty() {
            all = batch.columns;
        } else {
            for ((_, acc), (_, part)) in all.iter_mut().zip(&batch.columns) {
                for row in 0..part.len() {
                    acc.push_from(part, row);
                }
            }
        }
    }
    all
}
