//! Default benchmark pipelines.

use crate::graph::{load_spec, PipelineSpec};

pub const SKIM_COLUMNS: [&str; 6] = ["event_weight", "MET_pt", "nJet", "Jet_pt", "Jet_eta", "Jet_phi"];

/// Loose selection keeping about 5% of generated events, written out whole.
pub fn default_pre_spec(dataset: &[String], skim_prefix: &str) -> PipelineSpec {
    let doc = serde_json::json!({
        "dataset": dataset,
        "stages": [
            {"op": "count", "name": "n_input"},
            {"op": "filter", "expr": "MET_pt > 95.0 && nJet >= 2", "label": "presel"},
            {"op": "count", "name": "n_skim"},
            {"op": "snapshot", "columns": SKIM_COLUMNS, "out": skim_prefix},
        ]
    });
    load_spec(&doc.to_string()).expect("default preselection spec is valid")
}

/// (tag, jet-pT factor) of the jet topology variations.
const JET_VARIATIONS: [(&str, f64); 6] = [
    ("jesUp", 1.03),
    ("jesDown", 0.97),
    ("jerUp", 1.05),
    ("jerDown", 0.95),
    ("jesFlavUp", 1.02),
    ("jesFlavDown", 0.98),
];

const MET_VARIATIONS: [(&str, f64); 2] = [("unclUp", 1.1), ("unclDown", 0.9)];

const WEIGHT_SOURCES: [&str; 11] = [
    "pu", "btag", "lepSF", "trig", "prefire", "isr", "fsr", "pdf", "qcdScale", "topPt", "ewk",
];

fn tags_exprs<'a>(column: &str, items: impl Iterator<Item = (String, f64)> + 'a) -> (Vec<String>, Vec<String>) {
    items.map(|(t, f)| (t, format!("{column} * {f:?}"))).unzip()
}

/// Three weighted histograms and 30 variations: 8 change event content
/// (jet and MET scales), 22 only rescale the event weight by dyadic factors.
pub fn default_post_spec(dataset: &[String]) -> PipelineSpec {
    let (jet_tags, jet_exprs) = tags_exprs("Jet_pt", JET_VARIATIONS.iter().map(|(t, f)| (t.to_string(), *f)));
    let (met_tags, met_exprs) = tags_exprs("MET_pt", MET_VARIATIONS.iter().map(|(t, f)| (t.to_string(), *f)));
    let weights = WEIGHT_SOURCES.iter().enumerate().flat_map(|(i, s)| {
        let d = (i + 1) as f64 / 64.0;
        [(format!("{s}Up"), 1.0 + d), (format!("{s}Down"), 1.0 - d)]
    });
    let (w_tags, w_exprs) = tags_exprs("event_weight", weights);
    let doc = serde_json::json!({
        "dataset": dataset,
        "stages": [
            {"op": "vary", "column": "Jet_pt", "kind": "topology", "tags": jet_tags, "exprs": jet_exprs},
            {"op": "vary", "column": "MET_pt", "kind": "topology", "tags": met_tags, "exprs": met_exprs},
            {"op": "vary", "column": "event_weight", "kind": "weight", "tags": w_tags, "exprs": w_exprs},
            {"op": "define", "name": "good_pt", "expr": "where(Jet_pt, abs(Jet_eta) < 2.4 && Jet_pt > 30.0)"},
            {"op": "filter", "expr": "len(good_pt) >= 2", "label": "two_jets"},
            {"op": "define", "name": "ht", "expr": "sum(good_pt)"},
            {"op": "define", "name": "lead_pt", "expr": "max(good_pt)"},
            {"op": "filter", "expr": "ht > 150.0", "label": "ht_cut"},
            {"op": "histo1d", "name": "h_ht", "column": "ht", "weight": "event_weight", "nbins": 40, "xmin": 0.0, "xmax": 2000.0},
            {"op": "histo1d", "name": "h_met", "column": "MET_pt", "weight": "event_weight", "nbins": 30, "xmin": 0.0, "xmax": 600.0},
            {"op": "histo1d", "name": "h_lead_pt", "column": "lead_pt", "weight": "event_weight", "nbins": 30, "xmin": 0.0, "xmax": 1000.0},
            {"op": "count", "name": "n_sel"},
        ]
    });
    load_spec(&doc.to_string()).expect("default postselection spec is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Stage, VaryKind};

    #[test]
    fn post_spec_shape() {
        let s = default_post_spec(&["a.col".into()]);
        assert_eq!(s.tags_of_kind(VaryKind::Topology).len(), 8);
        assert_eq!(s.tags_of_kind(VaryKind::Weight).len(), 22);
        let histos = s.stages.iter().filter(|st| matches!(st, Stage::Histo1D { .. })).count();
        assert_eq!(histos, 3);
        assert!(default_pre_spec(&["a.col".into()], "/tmp/skim").snapshot().is_some());
    }
}
