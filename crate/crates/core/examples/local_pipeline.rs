//! Loads a pipeline with systematic variations, shows the universes and
//! what each one touches, then runs it on local threads in one pass.

use colflow::bench::generate_columns;
use colflow::colstore::{open, write_dataset};
use colflow::engine::run_local;
use colflow::graph::{affected_nodes, build, load_spec, universes};
use colflow::hist::ResultValue;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let mut files = Vec::new();
    for i in 0..2 {
        let p = dir.path().join(format!("part{i}.col"));
        write_dataset(&p, &generate_columns(20_000, i), 5_000)?;
        files.push(p.to_string_lossy().into_owned());
    }
    let doc = serde_json::json!({
        "dataset": files,
        "stages": [
            {"op": "vary", "column": "Jet_pt", "kind": "topology", "tags": ["jesUp", "jesDown"],
             "exprs": ["Jet_pt * 1.03", "Jet_pt * 0.97"]},
            {"op": "vary", "column": "event_weight", "kind": "weight", "tags": ["puUp", "puDown"],
             "exprs": ["event_weight * 1.0625", "event_weight * 0.9375"]},
            {"op": "define", "name": "ht", "expr": "sum(where(Jet_pt, Jet_pt > 30.0))"},
            {"op": "filter", "expr": "ht > 100.0", "label": "ht_cut"},
            {"op": "histo1d", "name": "h_met", "column": "MET_pt", "weight": "event_weight", "nbins": 20, "xmin": 0, "xmax": 400},
            {"op": "count", "name": "n_pass"},
        ]
    });
    let spec = load_spec(&doc.to_string())?;
    let schema = open(&files[0])?.handle().schema.clone();
    let graph = build(&spec, &schema)?;
    println!("base columns read: {:?}", graph.base_column_names_read());
    for u in universes(&graph) {
        println!("universe {u:<8} affects nodes {:?}", affected_nodes(&graph, &u)?);
    }
    let out = run_local(&graph, &files, 4)?;
    println!("{} events, {} chunk bytes read", out.events_processed, out.chunk_bytes);
    for (label, results) in &out.results.universes {
        let summary: Vec<String> = results
            .iter()
            .map(|(name, v)| match v {
                ResultValue::Histo(h) => format!("{name}: {:.3}", h.total_weight()),
                ResultValue::Scalar(s) => format!("{name}: {}", s.value),
            })
            .collect();
        println!("{label:<8} {}", summary.join(", "));
    }
    Ok(())
}
