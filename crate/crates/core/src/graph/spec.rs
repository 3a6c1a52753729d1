use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use super::GraphError;
use crate::exprlang::{parse, Expr};

/// Whether a variation only reweights events or changes their content.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VaryKind {
    Weight,
    Topology,
}

/// Expression together with the text it was parsed from.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceExpr {
    pub text: String,
    pub ast: Expr,
}

impl SourceExpr {
    fn parse(index: usize, text: String) -> Result<Self, GraphError> {
        let ast = parse(&text).map_err(|source| GraphError::Expr { stage: index, source })?;
        Ok(SourceExpr { text, ast })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stage {
    Define {
        name: String,
        expr: SourceExpr,
    },
    Filter {
        expr: SourceExpr,
        label: String,
    },
    Vary {
        column: String,
        kind: VaryKind,
        tags: Vec<String>,
        exprs: Vec<SourceExpr>,
    },
    Histo1D {
        name: String,
        column: String,
        weight: Option<String>,
        nbins: u32,
        xmin: f64,
        xmax: f64,
    },
    Sum {
        name: String,
        column: String,
    },
    Count {
        name: String,
    },
    Snapshot {
        columns: Vec<String>,
        out: String,
    },
}

impl Stage {
    pub fn op(&self) -> &'static str {
        match self {
            Stage::Define { .. } => "define",
            Stage::Filter { .. } => "filter",
            Stage::Vary { .. } => "vary",
            Stage::Histo1D { .. } => "histo1d",
            Stage::Sum { .. } => "sum",
            Stage::Count { .. } => "count",
            Stage::Snapshot { .. } => "snapshot",
        }
    }

    /// Name of the result slot for histo1d/sum/count.
    pub fn result_name(&self) -> Option<&str> {
        match self {
            Stage::Histo1D { name, .. } | Stage::Sum { name, .. } | Stage::Count { name } => {
                Some(name)
            }
            _ => None,
        }
    }

    pub fn is_result(&self) -> bool {
        self.result_name().is_some() || matches!(self, Stage::Snapshot { .. })
    }

    fn to_json(&self) -> Json {
        use serde_json::json;
        match self {
            Stage::Define { name, expr } => json!({"op": "define", "name": name, "expr": expr.text}),
            Stage::Filter { expr, label } => json!({"op": "filter", "expr": expr.text, "label": label}),
            Stage::Vary {
                column,
                kind,
                tags,
                exprs,
            } => json!({
                "op": "vary",
                "column": column,
                "kind": kind,
                "tags": tags,
                "exprs": exprs.iter().map(|e| e.text.clone()).collect::<Vec<_>>(),
            }),
            Stage::Histo1D {
                name,
                column,
                weight,
                nbins,
                xmin,
                xmax,
            } => {
                let mut v = json!({
                    "op": "histo1d", "name": name, "column": column,
                    "nbins": nbins, "xmin": xmin, "xmax": xmax,
                });
                if let Some(w) = weight {
                    v["weight"] = json!(w);
                }
                v
            }
            Stage::Sum { name, column } => json!({"op": "sum", "name": name, "column": column}),
            Stage::Count { name } => json!({"op": "count", "name": name}),
            Stage::Snapshot { columns, out } => json!({"op": "snapshot", "columns": columns, "out": out}),
        }
    }
}

/// Parsed pipeline document.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSpec {
    pub dataset: Vec<String>,
    pub stages: Vec<Stage>,
}

impl PipelineSpec {
    /// Canonical JSON form; `load_spec(to_json())` reproduces `self`.
    pub fn to_json(&self) -> String {
        let doc = serde_json::json!({
            "dataset": self.dataset,
            "stages": self.stages.iter().map(Stage::to_json).collect::<Vec<_>>(),
        });
        serde_json::to_string_pretty(&doc).expect("spec serializes")
    }

    /// Copy with a different file list.
    pub fn with_dataset(&self, dataset: Vec<String>) -> PipelineSpec {
        PipelineSpec {
            dataset,
            stages: self.stages.clone(),
        }
    }

    pub fn snapshot(&self) -> Option<(&[String], &str)> {
        self.stages.iter().find_map(|s| match s {
            Stage::Snapshot { columns, out } => Some((columns.as_slice(), out.as_str())),
            _ => None,
        })
    }

    /// Replaces the snapshot output prefix.
    pub fn with_snapshot_out(&self, prefix: &str) -> PipelineSpec {
        let mut out = self.clone();
        for s in &mut out.stages {
            if let Stage::Snapshot { out, .. } = s {
                *out = prefix.to_string();
            }
        }
        out
    }

    /// Variation tags by kind, in declaration order.
    pub fn tags_of_kind(&self, kind: VaryKind) -> Vec<String> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                Stage::Vary { kind: k, tags, .. } if *k == kind => Some(tags.clone()),
                _ => None,
            })
            .flatten()
            .collect()
    }
}

fn required<'a>(
    index: usize,
    obj: &'a Map<String, Json>,
    field: &'static str,
) -> Result<&'a Json, GraphError> {
    obj.get(field)
        .filter(|v| !v.is_null())
        .ok_or(GraphError::MissingField { stage: index, field })
}

fn string(index: usize, obj: &Map<String, Json>, field: &'static str) -> Result<String, GraphError> {
    required(index, obj, field)?
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| GraphError::invalid(index, format!("'{field}' must be a string")))
}

fn strings(
    index: usize,
    obj: &Map<String, Json>,
    field: &'static str,
) -> Result<Vec<String>, GraphError> {
    let v = required(index, obj, field)?;
    let bad = || GraphError::invalid(index, format!("'{field}' must be a list of strings"));
    v.as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|x| x.as_str().map(str::to_string).ok_or_else(bad))
        .collect()
}

fn number(index: usize, obj: &Map<String, Json>, field: &'static str) -> Result<f64, GraphError> {
    required(index, obj, field)?
        .as_f64()
        .ok_or_else(|| GraphError::invalid(index, format!("'{field}' must be a number")))
}

fn parse_stage(index: usize, v: &Json) -> Result<Stage, GraphError> {
    let obj = v
        .as_object()
        .ok_or_else(|| GraphError::invalid(index, "stage must be an object".into()))?;
    let op = string(index, obj, "op")?;
    Ok(match op.as_str() {
        "define" => Stage::Define {
            name: string(index, obj, "name")?,
            expr: SourceExpr::parse(index, string(index, obj, "expr")?)?,
        },
        "filter" => {
            let expr = SourceExpr::parse(index, string(index, obj, "expr")?)?;
            let label = match obj.get("label").filter(|l| !l.is_null()) {
                Some(_) => string(index, obj, "label")?,
                None => expr.text.clone(),
            };
            Stage::Filter { expr, label }
        }
        "vary" => {
            let column = string(index, obj, "column")?;
            let kind: VaryKind = serde_json::from_value(required(index, obj, "kind")?.clone())
                .map_err(|_| {
                    GraphError::invalid(index, "'kind' must be \"weight\" or \"topology\"".into())
                })?;
            let tags = strings(index, obj, "tags")?;
            let texts = strings(index, obj, "exprs")?;
            if tags.is_empty() || tags.len() != texts.len() {
                return Err(GraphError::invalid(
                    index,
                    format!(
                        "vary needs one expression per tag ({} tags, {} exprs)",
                        tags.len(),
                        texts.len()
                    ),
                ));
            }
            let exprs = texts
                .into_iter()
                .map(|t| SourceExpr::parse(index, t))
                .collect::<Result<_, _>>()?;
            Stage::Vary {
                column,
                kind,
                tags,
                exprs,
            }
        }
        "histo1d" => {
            let nbins = number(index, obj, "nbins")?;
            if nbins.fract() != 0.0 || !(1.0..=f64::from(u32::MAX)).contains(&nbins) {
                return Err(GraphError::invalid(index, "'nbins' must be a positive integer".into()));
            }
            let xmin = number(index, obj, "xmin")?;
            let xmax = number(index, obj, "xmax")?;
            if !(xmin < xmax) {
                return Err(GraphError::invalid(index, "'xmin' must be below 'xmax'".into()));
            }
            let weight = match obj.get("weight").filter(|w| !w.is_null()) {
                Some(_) => Some(string(index, obj, "weight")?),
                None => None,
            };
            Stage::Histo1D {
                name: string(index, obj, "name")?,
                column: string(index, obj, "column")?,
                weight,
                nbins: nbins as u32,
                xmin,
                xmax,
            }
        }
        "sum" => Stage::Sum {
            name: string(index, obj, "name")?,
            column: string(index, obj, "column")?,
        },
        "count" => Stage::Count {
            name: string(index, obj, "name")?,
        },
        "snapshot" => {
            let columns = strings(index, obj, "columns")?;
            if columns.is_empty() {
                return Err(GraphError::invalid(index, "snapshot needs at least one column".into()));
            }
            Stage::Snapshot {
                columns,
                out: string(index, obj, "out")?,
            }
        }
        _ => return Err(GraphError::UnknownStageKind { stage: index, op }),
    })
}

/// Parses and syntactically validates a pipeline document.
pub fn load_spec(document: &str) -> Result<PipelineSpec, GraphError> {
    let root: Json = serde_json::from_str(document).map_err(|e| GraphError::Json(e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| GraphError::Json("document must be an object".into()))?;
    let dataset = match obj.get("dataset") {
        None => return Err(GraphError::MissingTopLevel("dataset")),
        Some(v) => v
            .as_array()
            .and_then(|a| a.iter().map(|x| x.as_str().map(str::to_string)).collect::<Option<Vec<_>>>())
            .ok_or_else(|| GraphError::Json("'dataset' must be a list of strings".into()))?,
    };
    if dataset.is_empty() {
        return Err(GraphError::EmptyDataset);
    }
    let raw_stages = obj
        .get("stages")
        .ok_or(GraphError::MissingTopLevel("stages"))?
        .as_array()
        .ok_or_else(|| GraphError::Json("'stages' must be a list".into()))?;
    let stages = raw_stages
        .iter()
        .enumerate()
        .map(|(i, s)| parse_stage(i, s))
        .collect::<Result<Vec<_>, _>>()?;

    let mut results: Vec<&str> = Vec::new();
    let mut tags: Vec<&str> = Vec::new();
    let mut snapshots = 0;
    for s in &stages {
        if let Some(name) = s.result_name() {
            if results.contains(&name) {
                return Err(GraphError::DuplicateName(name.to_string()));
            }
            results.push(name);
        }
        if let Stage::Vary { tags: t, .. } = s {
            for tag in t {
                if tag == super::NOMINAL || tags.contains(&tag.as_str()) {
                    return Err(GraphError::DuplicateTag(tag.clone()));
                }
                tags.push(tag);
            }
        }
        if matches!(s, Stage::Snapshot { .. }) {
            snapshots += 1;
        }
    }
    if snapshots > 1 {
        return Err(GraphError::MultipleSnapshots);
    }
    if !stages.iter().any(Stage::is_result) {
        return Err(GraphError::NoResultStage);
    }
    Ok(PipelineSpec { dataset, stages })
}
