mod common;

use std::sync::Arc;

use colflow::colstore;
use colflow::engine::{
    cluster_ranges, run_local, run_local_mode, run_range, run_range_with, EngineError, EntryRange, Mode,
    PartialResult, RangeOptions,
};
use colflow::graph::{build, load_spec, ComputationGraph};
use common::*;

struct Fixture {
    _dir: tempfile::TempDir,
    files: Vec<String>,
}

fn fixture(events: &[usize], cluster: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let files = events
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let p = dir.path().join(format!("f{i}.col"));
            write_fixture(&p, *n, cluster, 100 + i as u64);
            p.to_string_lossy().into_owned()
        })
        .collect();
    Fixture { _dir: dir, files }
}

fn graph_for(doc: &str, files: &[String]) -> ComputationGraph {
    let spec = load_spec(doc).unwrap();
    let schema = colstore::open(&files[0]).unwrap().handle().schema.clone();
    build(&spec, &schema).unwrap()
}

fn simple(files: &[String], stages: &str) -> ComputationGraph {
    let doc = format!(
        r#"{{"dataset": {}, "stages": [{stages}]}}"#,
        serde_json::to_string(files).unwrap()
    );
    graph_for(&doc, files)
}

#[test]
fn single_pass_matches_full_recompute_oracle() {
    let fx = fixture(&[600, 400], 64);
    let doc = fixture_spec(&fx.files);
    let g = graph_for(&doc, &fx.files);
    let engine = run_local(&g, &fx.files, 1).unwrap();
    let reference = oracle(&load_spec(&doc).unwrap(), &read_all_columns(&fx.files));
    assert_eq!(engine.results.labels(), vec!["nominal", "jesUp", "jesDown", "metUp", "wUp", "wDown"]);
    let d = max_diff_vs_oracle(&engine.results, &reference);
    assert!(d <= 1e-12, "max relative diff {d}");
    assert_eq!(engine.events_processed, 1000);
}

#[test]
fn every_universe_alone_equals_single_pass() {
    let fx = fixture(&[500], 100);
    let g = graph_for(&fixture_spec(&fx.files), &fx.files);
    let all = run_local(&g, &fx.files, 2).unwrap();
    for label in g.universe_labels() {
        let alone = run_local_mode(&g, &fx.files, 2, &Mode::OnlyUniverse(label.clone())).unwrap();
        assert_eq!(alone.results.labels(), vec![label.as_str()]);
        assert_eq!(alone.results.universe(&label), all.results.universe(&label), "{label}");
        assert_eq!(alone.chunk_bytes, all.chunk_bytes, "read-once volume");
    }
    let weights = run_local_mode(&g, &fx.files, 2, &Mode::WeightPass).unwrap();
    assert_eq!(weights.results.labels(), vec!["nominal", "wUp", "wDown"]);
    for label in ["nominal", "wUp", "wDown"] {
        assert_eq!(weights.results.universe(label), all.results.universe(label));
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let fx = fixture(&[700, 300, 0], 50);
    let g = graph_for(&fixture_spec(&fx.files), &fx.files);
    let one = run_local(&g, &fx.files, 1).unwrap();
    let eight = run_local(&g, &fx.files, 8).unwrap();
    assert_eq!(one.results, eight.results);
    assert_eq!(one.bytes_read, eight.bytes_read);
}

#[test]
fn counting_and_annihilating_filter() {
    let fx = fixture(&[1000], 128);
    let g = simple(&fx.files, r#"{"op":"count","name":"n"}"#);
    let r = run_range(&g, &EntryRange::new(fx.files[0].clone(), 0, 1000), &Mode::SinglePass).unwrap();
    assert_eq!(r.results.get("nominal", "n").unwrap().as_scalar().unwrap().value, 1000.0);

    let g = simple(
        &fx.files,
        r#"{"op":"filter","expr":"MET_pt < 0 && MET_pt > 0"},
           {"op":"histo1d","name":"h","column":"MET_pt","nbins":5,"xmin":0,"xmax":100}"#,
    );
    let r = run_local(&g, &fx.files, 3).unwrap();
    let h = r.results.get("nominal", "h").unwrap().as_histo().unwrap();
    assert_eq!(h.entries(), 0);
    assert!(h.sumw().iter().all(|v| *v == 0.0));
    assert_eq!(r.events_processed, 1000);
}

#[test]
fn filter_never_increases_count() {
    let fx = fixture(&[800], 100);
    let g = simple(
        &fx.files,
        r#"{"op":"count","name":"before"},{"op":"filter","expr":"nJet >= 2"},{"op":"count","name":"after"},
           {"op":"filter","expr":"true"},{"op":"count","name":"after_true"}"#,
    );
    let r = run_local(&g, &fx.files, 2).unwrap();
    let v = |n| r.results.get("nominal", n).unwrap().as_scalar().unwrap().value;
    assert!(v("after") <= v("before"));
    assert_eq!(v("after"), v("after_true"));
}

#[test]
fn partition_invariance() {
    let fx = fixture(&[900], 100);
    let g = graph_for(&fixture_spec(&fx.files), &fx.files);
    let uri = fx.files[0].clone();
    let full = run_range(&g, &EntryRange::new(uri.clone(), 0, 900), &Mode::SinglePass).unwrap();
    for cuts in [vec![0, 900], vec![0, 100, 900], vec![0, 300, 400, 800, 900]] {
        let mut merged = PartialResult::default();
        for w in cuts.windows(2) {
            let part = run_range(&g, &EntryRange::new(uri.clone(), w[0], w[1]), &Mode::SinglePass).unwrap();
            merged.merge(&part).unwrap();
        }
        assert_eq!(merged.results, full.results, "{cuts:?}");
        assert_eq!(merged.events_processed, 900);
        assert_eq!(merged.chunk_bytes, full.chunk_bytes);
    }
}

#[test]
fn run_local_bytes_are_sum_of_tasks() {
    let fx = fixture(&[300, 200], 64);
    let g = graph_for(&fixture_spec(&fx.files), &fx.files);
    let handles: Vec<_> = fx
        .files
        .iter()
        .map(|f| Arc::clone(colstore::open(f).unwrap().handle()))
        .collect();
    let mut sum = 0;
    for range in cluster_ranges(&handles) {
        sum += run_range(&g, &range, &Mode::SinglePass).unwrap().bytes_read;
    }
    assert_eq!(run_local(&g, &fx.files, 4).unwrap().bytes_read, sum);
}

#[test]
fn empty_dataset_gives_empty_result() {
    let fx = fixture(&[10], 10);
    let g = simple(&fx.files, r#"{"op":"count","name":"n"}"#);
    let r = run_local(&g, &[], 4).unwrap();
    assert_eq!(r.events_processed, 0);
    assert!(r.results.is_empty());
}

#[test]
fn eval_error_reports_entry_and_stage() {
    let fx = fixture(&[200], 50);
    let g = simple(
        &fx.files,
        r#"{"op":"define","name":"j0","expr":"Jet_pt[0]"},{"op":"histo1d","name":"h","column":"j0","nbins":4,"xmin":0,"xmax":200}"#,
    );
    let err = run_local(&g, &fx.files, 1).unwrap_err();
    match err {
        EngineError::Eval { stage, universe, .. } => {
            assert_eq!(stage, 0);
            assert_eq!(universe, "nominal");
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn snapshot_identity_and_skim_count() {
    let fx = fixture(&[400], 64);
    let out = fx._dir.path().join("skim");
    let out = out.to_string_lossy();
    let all = r#"["event_weight","MET_pt","nJet","Jet_pt","Jet_eta","Jet_phi"]"#;
    let g = simple(
        &fx.files,
        &format!(r#"{{"op":"filter","expr":"true"}},{{"op":"snapshot","columns":{all},"out":"{out}"}}"#),
    );
    let range = EntryRange::new(fx.files[0].clone(), 64, 300);
    let r = run_range_with(&g, &range, &Mode::SinglePass, &RangeOptions {
        range_id: Some("7".into()),
        ..Default::default()
    })
    .unwrap();
    assert_eq!(r.snapshot_parts, vec![format!("{out}.part7.col")]);
    let source = read_all_columns(&fx.files);
    let skim = read_all_columns(&r.snapshot_parts);
    for ((n1, a), (n2, b)) in source.iter().zip(&skim) {
        assert_eq!(n1, n2);
        assert_eq!(&a.slice(64, 300), b);
    }

    let g = simple(
        &fx.files,
        &format!(
            r#"{{"op":"define","name":"ht","expr":"sum(Jet_pt)"}},{{"op":"filter","expr":"ht > 250"}},
               {{"op":"count","name":"n"}},{{"op":"snapshot","columns":["ht","nJet"],"out":"{out}"}}"#
        ),
    );
    let r = run_local(&g, &fx.files, 3).unwrap();
    let passing: u64 = r
        .snapshot_parts
        .iter()
        .map(|p| colstore::open(p).unwrap().handle().total_entries)
        .sum();
    let doc = r#"{"dataset": ["x"], "stages": [{"op":"define","name":"ht","expr":"sum(Jet_pt)"},{"op":"filter","expr":"ht > 250"},{"op":"count","name":"n"}]}"#;
    let reference = oracle(&load_spec(doc).unwrap(), &source);
    let RefResult::Scalar(expected) = reference[0].1[0].1 else { panic!() };
    assert_eq!(passing as f64, expected);
    assert!(passing > 0);

    let g = simple(
        &fx.files,
        &format!(r#"{{"op":"filter","expr":"MET_pt < 0"}},{{"op":"snapshot","columns":["MET_pt"],"out":"{out}_none"}}"#),
    );
    let r = run_range(&g, &EntryRange::new(fx.files[0].clone(), 0, 400), &Mode::SinglePass).unwrap();
    assert_eq!(colstore::open(&r.snapshot_parts[0]).unwrap().handle().total_entries, 0);
}
