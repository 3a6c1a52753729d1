//! Pipeline documents and the validated computation graph built from them.
//!
//! Stages form a linear chain: a filter applies to every stage after it.
//! Column slots are laid out as the file schema first, then each define in
//! declaration order.

mod spec;

use std::collections::BTreeSet;

use crate::colstore::{ColstoreError, ColumnSchema, DatasetHandle, Dtype};
use crate::exprlang::{compile, Compiled, ExprError, ValueType};
use crate::hist::{Histo1D, ResultValue, ScalarAccumulator};

pub use spec::{load_spec, PipelineSpec, SourceExpr, Stage, VaryKind};

/// Label of the unvaried universe.
pub const NOMINAL: &str = "nominal";

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("malformed document: {0}")]
    Json(String),
    #[error("missing top-level key '{0}'")]
    MissingTopLevel(&'static str),
    #[error("dataset lists no files")]
    EmptyDataset,
    #[error("stage {stage}: unknown stage kind '{op}'")]
    UnknownStageKind { stage: usize, op: String },
    #[error("stage {stage}: missing field '{field}'")]
    MissingField { stage: usize, field: &'static str },
    #[error("stage {stage}: {message}")]
    Invalid { stage: usize, message: String },
    #[error("duplicate result name '{0}'")]
    DuplicateName(String),
    #[error("duplicate variation tag '{0}'")]
    DuplicateTag(String),
    #[error("at most one snapshot stage is supported")]
    MultipleSnapshots,
    #[error("pipeline has no result stage")]
    NoResultStage,
    #[error("stage {stage}: {source}")]
    Expr { stage: usize, source: ExprError },
    #[error("stage {stage}: filter must be boolean, found {ty}")]
    FilterNotBoolean { stage: usize, ty: ValueType },
    #[error("stage {stage}: vary target '{column}' is not a column")]
    UnknownVaryTarget { stage: usize, column: String },
    #[error("stage {stage}: unknown column '{column}'")]
    UnknownColumn { stage: usize, column: String },
    #[error("stage {stage}: define '{name}' shadows an existing column")]
    Shadowing { stage: usize, name: String },
    #[error("'{uri}' has a different schema than '{first}'")]
    SchemaMismatch { uri: String, first: String },
    #[error("unknown universe '{0}'")]
    UnknownUniverse(String),
    #[error(transparent)]
    Data(#[from] ColstoreError),
}

impl GraphError {
    pub(crate) fn invalid(stage: usize, message: String) -> Self {
        GraphError::Invalid { stage, message }
    }
}

/// Typed, slot-bound form of one stage.
#[derive(Debug, Clone)]
pub enum Node {
    Define {
        name: String,
        expr: Compiled,
        slot: usize,
    },
    Filter {
        label: String,
        expr: Compiled,
    },
    /// Index into [`ComputationGraph::variations`].
    Vary { set: usize },
    Histo {
        result: usize,
        slot: usize,
        weight: Option<usize>,
    },
    Sum {
        result: usize,
        slot: usize,
    },
    Count {
        result: usize,
    },
    Snapshot {
        /// (name, slot, stored dtype)
        columns: Vec<(String, usize, Dtype)>,
        out: String,
    },
}

impl Node {
    /// Slots read by this node.
    pub fn reads(&self) -> Vec<usize> {
        match self {
            Node::Define { expr, .. } | Node::Filter { expr, .. } => expr.slots().to_vec(),
            Node::Vary { .. } | Node::Count { .. } => Vec::new(),
            Node::Histo { slot, weight, .. } => {
                let mut v = vec![*slot];
                if let Some(w) = weight {
                    if w != slot {
                        v.push(*w);
                    }
                }
                v
            }
            Node::Sum { slot, .. } => vec![*slot],
            Node::Snapshot { columns, .. } => columns.iter().map(|c| c.1).collect(),
        }
    }

    pub fn is_action(&self) -> bool {
        matches!(self, Node::Histo { .. } | Node::Sum { .. } | Node::Count { .. })
    }
}

#[derive(Debug, Clone)]
pub struct VariationSet {
    /// Stage index of the vary declaration.
    pub stage: usize,
    pub target: String,
    pub target_slot: usize,
    pub kind: VaryKind,
    pub tags: Vec<String>,
    pub exprs: Vec<Compiled>,
}

#[derive(Debug, Clone)]
pub struct Universe {
    pub label: String,
    /// (variation set, index within the set); `None` for nominal.
    pub variation: Option<(usize, usize)>,
    /// Stage indices that must be re-evaluated, ascending.
    pub affected: Vec<usize>,
}

impl Universe {
    pub fn kind(&self, graph: &ComputationGraph) -> Option<VaryKind> {
        self.variation.map(|(s, _)| graph.variations[s].kind)
    }
}

/// Validated, immutable pipeline bound to a file schema.
#[derive(Debug, Clone)]
pub struct ComputationGraph {
    pub spec: PipelineSpec,
    pub schema: Vec<ColumnSchema>,
    /// Name and type of every slot.
    pub slots: Vec<(String, ValueType)>,
    pub nodes: Vec<Node>,
    pub variations: Vec<VariationSet>,
    pub universes: Vec<Universe>,
    /// Empty result per result slot, in stage order.
    pub results: Vec<(String, ResultValue)>,
}

fn numeric_column(ty: ValueType) -> bool {
    ty.is_numeric()
}

impl ComputationGraph {
    pub fn n_base(&self) -> usize {
        self.schema.len()
    }

    /// Schema indices of the base columns any stage reads, ascending.
    pub fn base_columns_read(&self) -> Vec<usize> {
        let mut set = BTreeSet::new();
        for n in &self.nodes {
            set.extend(n.reads());
        }
        for v in &self.variations {
            set.insert(v.target_slot);
            for e in &v.exprs {
                set.extend(e.slots().iter().copied());
            }
        }
        set.into_iter().filter(|s| *s < self.n_base()).collect()
    }

    pub fn base_column_names_read(&self) -> Vec<String> {
        self.base_columns_read()
            .into_iter()
            .map(|i| self.schema[i].name.clone())
            .collect()
    }

    /// Index of the define stage producing `slot`, if any.
    pub fn producer(&self, slot: usize) -> Option<usize> {
        self.nodes
            .iter()
            .position(|n| matches!(n, Node::Define { slot: s, .. } if *s == slot))
    }

    /// Column dependency edges (producing define stage, consuming stage).
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            for s in n.reads() {
                if let Some(p) = self.producer(s) {
                    out.push((p, i));
                }
            }
        }
        out
    }

    pub fn universe_labels(&self) -> Vec<String> {
        self.universes.iter().map(|u| u.label.clone()).collect()
    }

    pub fn universe_index(&self, label: &str) -> Option<usize> {
        self.universes.iter().position(|u| u.label == label)
    }

    pub fn snapshot_node(&self) -> Option<(usize, &[(String, usize, Dtype)], &str)> {
        self.nodes.iter().enumerate().find_map(|(i, n)| match n {
            Node::Snapshot { columns, out } => Some((i, columns.as_slice(), out.as_str())),
            _ => None,
        })
    }
}

/// `["nominal"]` followed by every variation tag in declaration order.
pub fn universes(graph: &ComputationGraph) -> Vec<String> {
    graph.universe_labels()
}

/// Stage indices that depend on the varied column of `universe`.
pub fn affected_nodes(graph: &ComputationGraph, universe: &str) -> Result<Vec<usize>, GraphError> {
    graph
        .universes
        .iter()
        .find(|u| u.label == universe)
        .map(|u| u.affected.clone())
        .ok_or_else(|| GraphError::UnknownUniverse(universe.to_string()))
}

/// Transitive closure from the varied column. Defines depend on the columns
/// they read; filters and actions also depend on every preceding filter.
fn compute_affected(nodes: &[Node], vary_stage: usize, target_slot: usize, nslots: usize) -> Vec<usize> {
    let mut varied = vec![false; nslots];
    varied[target_slot] = true;
    let mut filter_hit = false;
    let mut out = Vec::new();
    for (i, n) in nodes.iter().enumerate().skip(vary_stage + 1) {
        let touches = n.reads().iter().any(|s| varied[*s]);
        match n {
            Node::Define { slot, .. } => {
                if touches {
                    varied[*slot] = true;
                    out.push(i);
                }
            }
            Node::Filter { .. } => {
                if touches || filter_hit {
                    filter_hit = true;
                    out.push(i);
                }
            }
            Node::Histo { .. } | Node::Sum { .. } | Node::Count { .. } => {
                if touches || filter_hit {
                    out.push(i);
                }
            }
            Node::Vary { .. } | Node::Snapshot { .. } => {}
        }
    }
    out
}

/// Typechecks `spec` against `schema` and binds every column to a slot.
pub fn build(spec: &PipelineSpec, schema: &[ColumnSchema]) -> Result<ComputationGraph, GraphError> {
    let mut scope: Vec<(String, ValueType)> = schema
        .iter()
        .map(|c| (c.name.clone(), ValueType::from_dtype(c.dtype)))
        .collect();
    let lookup = |scope: &[(String, ValueType)], stage: usize, name: &str| {
        scope
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| (i, scope[i].1))
            .ok_or_else(|| GraphError::UnknownColumn {
                stage,
                column: name.to_string(),
            })
    };
    let mut nodes = Vec::with_capacity(spec.stages.len());
    let mut variations = Vec::new();
    let mut results = Vec::new();
    for (i, stage) in spec.stages.iter().enumerate() {
        let expr_err = |source| GraphError::Expr { stage: i, source };
        let node = match stage {
            Stage::Define { name, expr } => {
                if scope.iter().any(|(n, _)| n == name) {
                    return Err(GraphError::Shadowing {
                        stage: i,
                        name: name.clone(),
                    });
                }
                if !crate::colstore::is_valid_identifier(name) {
                    return Err(GraphError::invalid(i, format!("invalid column name '{name}'")));
                }
                let c = compile(&expr.ast, scope.as_slice()).map_err(expr_err)?;
                scope.push((name.clone(), c.ty()));
                Node::Define {
                    name: name.clone(),
                    expr: c,
                    slot: scope.len() - 1,
                }
            }
            Stage::Filter { expr, label } => {
                let c = compile(&expr.ast, scope.as_slice()).map_err(expr_err)?;
                if c.ty() != ValueType::Bool {
                    return Err(GraphError::FilterNotBoolean { stage: i, ty: c.ty() });
                }
                Node::Filter {
                    label: label.clone(),
                    expr: c,
                }
            }
            Stage::Vary {
                column,
                kind,
                tags,
                exprs,
            } => {
                let (target_slot, ty) = lookup(&scope, i, column).map_err(|_| {
                    GraphError::UnknownVaryTarget {
                        stage: i,
                        column: column.clone(),
                    }
                })?;
                let mut compiled = Vec::with_capacity(exprs.len());
                for (tag, e) in tags.iter().zip(exprs) {
                    let c = compile(&e.ast, scope.as_slice()).map_err(expr_err)?;
                    if c.ty() != ty {
                        return Err(GraphError::invalid(
                            i,
                            format!("variation '{tag}' has type {}, column '{column}' is {ty}", c.ty()),
                        ));
                    }
                    compiled.push(c);
                }
                variations.push(VariationSet {
                    stage: i,
                    target: column.clone(),
                    target_slot,
                    kind: *kind,
                    tags: tags.clone(),
                    exprs: compiled,
                });
                Node::Vary {
                    set: variations.len() - 1,
                }
            }
            Stage::Histo1D {
                name,
                column,
                weight,
                nbins,
                xmin,
                xmax,
            } => {
                let (slot, ty) = lookup(&scope, i, column)?;
                if !numeric_column(ty) {
                    return Err(GraphError::invalid(i, format!("cannot histogram '{column}' of type {ty}")));
                }
                let weight = match weight {
                    None => None,
                    Some(w) => {
                        let (ws, wty) = lookup(&scope, i, w)?;
                        if !(wty.is_numeric() && !wty.is_vector()) {
                            return Err(GraphError::invalid(
                                i,
                                format!("weight '{w}' must be a numeric scalar, found {wty}"),
                            ));
                        }
                        Some(ws)
                    }
                };
                let h = Histo1D::new(name.clone(), *nbins, *xmin, *xmax)
                    .map_err(|e| GraphError::invalid(i, e.to_string()))?;
                results.push((name.clone(), ResultValue::Histo(h)));
                Node::Histo {
                    result: results.len() - 1,
                    slot,
                    weight,
                }
            }
            Stage::Sum { name, column } => {
                let (slot, ty) = lookup(&scope, i, column)?;
                if !numeric_column(ty) {
                    return Err(GraphError::invalid(i, format!("cannot sum '{column}' of type {ty}")));
                }
                results.push((name.clone(), ResultValue::Scalar(ScalarAccumulator::sum())));
                Node::Sum {
                    result: results.len() - 1,
                    slot,
                }
            }
            Stage::Count { name } => {
                results.push((name.clone(), ResultValue::Scalar(ScalarAccumulator::count())));
                Node::Count {
                    result: results.len() - 1,
                }
            }
            Stage::Snapshot { columns, out } => {
                let mut cols = Vec::with_capacity(columns.len());
                for c in columns {
                    let (slot, ty) = lookup(&scope, i, c)?;
                    let dtype = ty.to_dtype().ok_or_else(|| {
                        GraphError::invalid(i, format!("column '{c}' of type {ty} cannot be stored"))
                    })?;
                    if cols.iter().any(|(n, _, _): &(String, usize, Dtype)| n == c) {
                        return Err(GraphError::invalid(i, format!("column '{c}' listed twice")));
                    }
                    cols.push((c.clone(), slot, dtype));
                }
                Node::Snapshot {
                    columns: cols,
                    out: out.clone(),
                }
            }
        };
        nodes.push(node);
    }

    let nslots = scope.len();
    let mut universes = vec![Universe {
        label: NOMINAL.to_string(),
        variation: None,
        affected: Vec::new(),
    }];
    for (si, set) in variations.iter().enumerate() {
        let affected = compute_affected(&nodes, set.stage, set.target_slot, nslots);
        for (ti, tag) in set.tags.iter().enumerate() {
            universes.push(Universe {
                label: tag.clone(),
                variation: Some((si, ti)),
                affected: affected.clone(),
            });
        }
    }

    Ok(ComputationGraph {
        spec: spec.clone(),
        schema: schema.to_vec(),
        slots: scope,
        nodes,
        variations,
        universes,
        results,
    })
}

/// Checks that every handle shares the first one's schema and returns it.
pub fn common_schema(handles: &[&DatasetHandle]) -> Result<Vec<ColumnSchema>, GraphError> {
    let first = handles.first().ok_or(GraphError::EmptyDataset)?;
    for h in &handles[1..] {
        if h.schema != first.schema {
            return Err(GraphError::SchemaMismatch {
                uri: h.uri.clone(),
                first: first.uri.clone(),
            });
        }
    }
    Ok(first.schema.clone())
}
