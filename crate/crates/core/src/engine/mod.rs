//! The event loop: runs a computation graph over an entry range in a
//! single traversal, producing results for every requested universe.
//!
//! Per event the nominal universe is walked first. Each varied universe
//! then re-evaluates only the stages it affects; unaffected defines and
//! filters are read from the nominal cache (computed on demand when the
//! nominal walk stopped early), and unaffected actions are copied from the
//! nominal results at the end of the range.

mod results;

use std::borrow::Cow;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::colstore::{
    self, write_dataset, ColstoreError, ColumnData, DatasetHandle, Reader,
    DEFAULT_CLUSTER_SIZE,
};
use crate::exprlang::{Compiled, EvalError, RowContext, Value};
use crate::graph::{ComputationGraph, Node, VaryKind, NOMINAL};
use crate::hist::{HistError, ResultValue};

pub use results::{PartialResult, ResultSet};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("entry {entry}, stage {stage}, universe '{universe}': {source}")]
    Eval {
        entry: u64,
        stage: usize,
        universe: String,
        source: EvalError,
    },
    #[error("entry {entry}, stage {stage}: {source}")]
    Fill {
        entry: u64,
        stage: usize,
        source: HistError,
    },
    #[error("unknown universe '{0}'")]
    UnknownUniverse(String),
    #[error("file '{uri}' does not match the graph schema")]
    SchemaMismatch { uri: String },
    #[error(transparent)]
    Data(#[from] ColstoreError),
    #[error("merge failed: {0}")]
    Merge(#[from] HistError),
    #[error("cancelled")]
    Cancelled,
}

/// A contiguous entry range of one file.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EntryRange {
    pub uri: String,
    pub begin: u64,
    pub end: u64,
}

impl EntryRange {
    pub fn new(uri: impl Into<String>, begin: u64, end: u64) -> Self {
        EntryRange {
            uri: uri.into(),
            begin,
            end,
        }
    }

    pub fn len(&self) -> u64 {
        self.end.saturating_sub(self.begin)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which universes a run evaluates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mode {
    /// Nominal and every variation in one traversal.
    SinglePass,
    /// Exactly one universe.
    OnlyUniverse(String),
    /// Nominal plus the weight-kind variations.
    WeightPass,
}

impl Mode {
    /// Universe labels this mode produces, in graph order.
    pub fn universes(&self, graph: &ComputationGraph) -> Result<Vec<String>, EngineError> {
        Ok(match self {
            Mode::SinglePass => graph.universe_labels(),
            Mode::OnlyUniverse(u) => {
                graph
                    .universe_index(u)
                    .ok_or_else(|| EngineError::UnknownUniverse(u.clone()))?;
                vec![u.clone()]
            }
            Mode::WeightPass => graph
                .universes
                .iter()
                .filter(|u| u.variation.is_none() || u.kind(graph) == Some(VaryKind::Weight))
                .map(|u| u.label.clone())
                .collect(),
        })
    }
}

/// Where snapshot part files go.
#[derive(Debug, Clone, Default)]
pub struct RangeOptions {
    /// Suffix of the part file name; derived from the range when unset.
    pub range_id: Option<String>,
    /// Skip the snapshot stage even if the graph has one.
    pub no_snapshot: bool,
    /// Checked between batches; set to abort the task.
    pub cancel: Option<Arc<AtomicBool>>,
}

/// Part-file path for a snapshot prefix and range id.
pub fn snapshot_part_path(prefix: &str, range_id: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}.part{range_id}.col"))
}

/// Range id used when the caller does not provide one.
pub fn default_range_id(range: &EntryRange) -> String {
    let stem = Path::new(range.uri.rsplit('/').next().unwrap_or(&range.uri))
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let stem: String = stem
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect();
    format!("{stem}-{}-{}", range.begin, range.end)
}

/// Opens `range.uri` and runs the graph over it.
pub fn run_range(graph: &ComputationGraph, range: &EntryRange, mode: &Mode) -> Result<PartialResult, EngineError> {
    run_range_with(graph, range, mode, &RangeOptions::default())
}

pub fn run_range_with(
    graph: &ComputationGraph,
    range: &EntryRange,
    mode: &Mode,
    opts: &RangeOptions,
) -> Result<PartialResult, EngineError> {
    let mut reader = colstore::open(&range.uri)?;
    let range_id = opts.range_id.clone().unwrap_or_else(|| default_range_id(range));
    let opts = RangeOptions {
        range_id: Some(range_id),
        ..opts.clone()
    };
    run_reader(graph, &mut reader, range.begin, range.end, mode, &opts)
}

/// Runs over `[begin, end)` of an already open reader. Byte counters in the
/// result cover everything this reader read, including earlier calls.
pub fn run_reader(
    graph: &ComputationGraph,
    reader: &mut Reader,
    begin: u64,
    end: u64,
    mode: &Mode,
    opts: &RangeOptions,
) -> Result<PartialResult, EngineError> {
    if reader.handle().schema != graph.schema {
        return Err(EngineError::SchemaMismatch {
            uri: reader.handle().uri.clone(),
        });
    }
    let plan = Plan::new(graph, mode, opts.no_snapshot)?;
    let columns = graph.base_column_names_read();
    let mut exec = Exec::new(graph, &plan);
    let mut peak = 0usize;
    let mut events = 0u64;

    let t0 = Instant::now();
    for batch in reader.read_range(&columns, begin, end)? {
        if opts.cancel.as_ref().is_some_and(|c| c.load(Ordering::Relaxed)) {
            return Err(EngineError::Cancelled);
        }
        let batch = batch?;
        let mut base: Vec<Option<&ColumnData>> = vec![None; graph.n_base()];
        for (i, (_, data)) in plan.base_cols.iter().zip(&batch.columns) {
            base[*i] = Some(data);
        }
        for row in 0..batch.entry_count {
            exec.event(&base, row, batch.entry_start + row as u64)?;
        }
        events += batch.entry_count as u64;
        peak = peak.max(batch.heap_bytes() + exec.snapshot_bytes());
    }
    let t_loop = t0.elapsed().as_secs_f64();

    let results = exec.finish();
    let mut snapshot_parts = Vec::new();
    if let Some(columns) = exec.snapshot.take() {
        let (_, _, prefix) = graph.snapshot_node().expect("plan has a snapshot");
        let id = opts
            .range_id
            .clone()
            .unwrap_or_else(|| format!("{begin}-{end}"));
        let path = snapshot_part_path(prefix, &id);
        write_dataset(&path, &columns, DEFAULT_CLUSTER_SIZE)?;
        snapshot_parts.push(path.to_string_lossy().into_owned());
    }
    let account = reader.account();
    Ok(PartialResult {
        results,
        snapshot_parts,
        events_processed: events,
        t_loop,
        bytes_read: account.bytes_read,
        read_calls: account.read_calls,
        chunk_bytes: account.chunk_bytes,
        peak_buffer_bytes: peak as u64,
    })
}

struct UniversePlan {
    /// Index into graph.universes.
    index: usize,
    /// (vary stage, variation set, tag index)
    vary: Option<(usize, usize, usize)>,
    /// Per stage: evaluate in this universe (as opposed to reading nominal).
    eval: Vec<bool>,
    /// Last stage that must be walked.
    last: Option<usize>,
    /// Actions whose results are copied from nominal at the end.
    copy_from_nominal: Vec<usize>,
}

struct Plan {
    /// Schema indices of the columns read, in batch order.
    base_cols: Vec<usize>,
    walk_nominal: bool,
    nominal_index: usize,
    snapshot: bool,
    universes: Vec<UniversePlan>,
}

impl Plan {
    fn new(graph: &ComputationGraph, mode: &Mode, no_snapshot: bool) -> Result<Plan, EngineError> {
        let labels = mode.universes(graph)?;
        let fill_all = matches!(mode, Mode::OnlyUniverse(_));
        let walk_nominal = labels.iter().any(|l| l == NOMINAL);
        let nstages = graph.nodes.len();
        let mut universes = Vec::new();
        for label in &labels {
            let index = graph.universe_index(label).expect("validated by mode");
            let u = &graph.universes[index];
            let Some((set, tag)) = u.variation else {
                continue;
            };
            let mut eval = vec![false; nstages];
            for &s in &u.affected {
                eval[s] = true;
            }
            let mut copy_from_nominal = Vec::new();
            for (i, n) in graph.nodes.iter().enumerate() {
                if n.is_action() && !eval[i] {
                    if fill_all {
                        eval[i] = true;
                    } else {
                        copy_from_nominal.push(i);
                    }
                }
            }
            let vary_stage = graph.variations[set].stage;
            let last = eval.iter().rposition(|e| *e);
            universes.push(UniversePlan {
                index,
                vary: Some((vary_stage, set, tag)),
                eval,
                last,
                copy_from_nominal,
            });
        }
        Ok(Plan {
            base_cols: graph.base_columns_read(),
            walk_nominal,
            nominal_index: 0,
            snapshot: walk_nominal && !no_snapshot && graph.snapshot_node().is_some(),
            universes,
        })
    }
}

/// Reads a slot: universe override, then base column, then nominal cache.
struct Ctx<'a> {
    base: &'a [Option<&'a ColumnData>],
    row: usize,
    nominal: &'a [Option<Value<'static>>],
    over: Option<&'a [Option<Value<'static>>]>,
}

fn column_value(data: &ColumnData, row: usize) -> Value<'_> {
    match data {
        ColumnData::F64(v) => Value::F64(v[row]),
        ColumnData::I64(v) => Value::I64(v[row]),
        ColumnData::Bool(v) => Value::Bool(v[row]),
        ColumnData::VecF64 { offsets, values } => {
            Value::VecF64(Cow::Borrowed(&values[offsets[row]..offsets[row + 1]]))
        }
        ColumnData::VecI64 { offsets, values } => {
            Value::VecI64(Cow::Borrowed(&values[offsets[row]..offsets[row + 1]]))
        }
    }
}

impl RowContext for Ctx<'_> {
    fn get(&self, slot: usize) -> Value<'_> {
        if let Some(v) = self.over.and_then(|o| o[slot].as_ref()) {
            return v.borrowed();
        }
        match self.base.get(slot) {
            Some(col) => column_value(col.expect("column read for this graph"), self.row),
            None => self.nominal[slot]
                .as_ref()
                .expect("nominal value computed before use")
                .borrowed(),
        }
    }
}

fn push_value(col: &mut ColumnData, v: &Value<'_>) {
    match (col, v) {
        (ColumnData::F64(c), Value::F64(x)) => c.push(*x),
        (ColumnData::I64(c), Value::I64(x)) => c.push(*x),
        (ColumnData::Bool(c), Value::Bool(x)) => c.push(*x),
        (ColumnData::VecF64 { offsets, values }, Value::VecF64(x)) => {
            values.extend_from_slice(x);
            offsets.push(values.len());
        }
        (ColumnData::VecI64 { offsets, values }, Value::VecI64(x)) => {
            values.extend_from_slice(x);
            offsets.push(values.len());
        }
        (c, v) => unreachable!("snapshot type mismatch: {:?} vs {:?}", c.dtype(), v.ty()),
    }
}

fn fill(result: &mut ResultValue, value: Value<'_>, weight: f64) -> Result<(), HistError> {
    match result {
        ResultValue::Histo(h) => match value {
            Value::VecF64(v) => v.iter().try_for_each(|x| h.fill(*x, weight)),
            Value::VecI64(v) => v.iter().try_for_each(|x| h.fill(*x as f64, weight)),
            other => h.fill(other.as_f64().expect("numeric scalar"), weight),
        },
        ResultValue::Scalar(s) => {
            match value {
                Value::VecF64(v) => v.iter().for_each(|x| s.add(*x)),
                Value::VecI64(v) => v.iter().for_each(|x| s.add(*x as f64)),
                other => s.add(other.as_f64().expect("numeric scalar")),
            }
            Ok(())
        }
    }
}

struct Exec<'g> {
    graph: &'g ComputationGraph,
    plan: &'g Plan,
    /// Per slot; base slots stay `None`.
    nominal: Vec<Option<Value<'static>>>,
    filter_cache: Vec<Option<bool>>,
    over: Vec<Option<Value<'static>>>,
    /// Per universe index in the graph: result values.
    results: Vec<Option<Vec<ResultValue>>>,
    define_at: Vec<Option<usize>>,
    snapshot: Option<Vec<(String, ColumnData)>>,
}

impl<'g> Exec<'g> {
    fn new(graph: &'g ComputationGraph, plan: &'g Plan) -> Self {
        let nslots = graph.slots.len();
        let empty: Vec<ResultValue> = graph.results.iter().map(|(_, v)| v.clone()).collect();
        let mut results = vec![None; graph.universes.len()];
        if plan.walk_nominal {
            results[plan.nominal_index] = Some(empty.clone());
        }
        for u in &plan.universes {
            results[u.index] = Some(empty.clone());
        }
        let mut define_at = vec![None; nslots];
        for (i, n) in graph.nodes.iter().enumerate() {
            if let Node::Define { slot, .. } = n {
                define_at[*slot] = Some(i);
            }
        }
        let snapshot = plan.snapshot.then(|| {
            let (_, cols, _) = graph.snapshot_node().expect("checked by plan");
            cols.iter()
                .map(|(n, _, d)| (n.clone(), ColumnData::empty(*d)))
                .collect()
        });
        Exec {
            graph,
            plan,
            nominal: vec![None; nslots],
            filter_cache: vec![None; graph.nodes.len()],
            over: vec![None; nslots],
            results,
            define_at,
            snapshot,
        }
    }

    fn snapshot_bytes(&self) -> usize {
        self.snapshot
            .as_ref()
            .map_or(0, |c| c.iter().map(|(_, d)| d.heap_bytes()).sum())
    }

    fn define_expr(&self, slot: usize) -> &'g Compiled {
        let stage = self.define_at[slot].expect("slot is a define");
        match &self.graph.nodes[stage] {
            Node::Define { expr, .. } => expr,
            _ => unreachable!(),
        }
    }

    /// Computes the nominal value of define `slot` and its inputs if missing.
    fn ensure_nominal(&mut self, base: &[Option<&ColumnData>], row: usize, entry: u64, slot: usize) -> Result<(), EngineError> {
        if slot < self.graph.n_base() || self.nominal[slot].is_some() {
            return Ok(());
        }
        let expr = self.define_expr(slot);
        for &dep in expr.slots() {
            self.ensure_nominal(base, row, entry, dep)?;
        }
        let ctx = Ctx {
            base,
            row,
            nominal: &self.nominal,
            over: None,
        };
        let v = expr
            .eval(&ctx)
            .map_err(|source| EngineError::Eval {
                entry,
                stage: self.define_at[slot].unwrap_or(0),
                universe: NOMINAL.into(),
                source,
            })?
            .into_owned();
        self.nominal[slot] = Some(v);
        Ok(())
    }

    /// Makes every slot `expr` reads available in the current universe.
    fn ensure_inputs(&mut self, base: &[Option<&ColumnData>], row: usize, entry: u64, slots: &[usize], use_over: bool) -> Result<(), EngineError> {
        for &s in slots {
            if use_over && self.over[s].is_some() {
                continue;
            }
            self.ensure_nominal(base, row, entry, s)?;
        }
        Ok(())
    }

    fn nominal_filter(&mut self, base: &[Option<&ColumnData>], row: usize, entry: u64, stage: usize, expr: &Compiled) -> Result<bool, EngineError> {
        if let Some(v) = self.filter_cache[stage] {
            return Ok(v);
        }
        self.ensure_inputs(base, row, entry, expr.slots(), false)?;
        let ctx = Ctx {
            base,
            row,
            nominal: &self.nominal,
            over: None,
        };
        let v = expr.eval(&ctx).map_err(|source| EngineError::Eval {
            entry,
            stage,
            universe: NOMINAL.into(),
            source,
        })?;
        let v = v.as_bool().expect("filter typed BOOL");
        self.filter_cache[stage] = Some(v);
        Ok(v)
    }

    fn fill_action(&mut self, base: &[Option<&ColumnData>], row: usize, entry: u64, stage: usize, universe: usize, use_over: bool) -> Result<(), EngineError> {
        let graph = self.graph;
        let node = &graph.nodes[stage];
        let reads = node.reads();
        self.ensure_inputs(base, row, entry, &reads, use_over)?;
        let ctx = Ctx {
            base,
            row,
            nominal: &self.nominal,
            over: use_over.then_some(self.over.as_slice()),
        };
        let (result, value, weight) = match node {
            Node::Histo { result, slot, weight } => (
                *result,
                ctx.get(*slot),
                weight.map_or(1.0, |w| ctx.get(w).as_f64().expect("numeric weight")),
            ),
            Node::Sum { result, slot } => (*result, ctx.get(*slot), 1.0),
            Node::Count { result } => (*result, Value::F64(1.0), 1.0),
            _ => unreachable!("not an action"),
        };
        let slot = &mut self.results[universe].as_mut().expect("universe active")[result];
        fill(slot, value, weight).map_err(|source| EngineError::Fill { entry, stage, source })
    }

    fn event(&mut self, base: &[Option<&ColumnData>], row: usize, entry: u64) -> Result<(), EngineError> {
        self.nominal.iter_mut().for_each(|v| *v = None);
        self.filter_cache.iter_mut().for_each(|v| *v = None);
        let graph = self.graph;
        if self.plan.walk_nominal {
            self.walk_nominal(base, row, entry)?;
        }
        let all: &'g Plan = self.plan;
        for plan in &all.universes {
            let Some(last) = plan.last else { continue };
            self.over.iter_mut().for_each(|v| *v = None);
            let label = &graph.universes[plan.index].label;
            let (vary_stage, set, tag) = plan.vary.expect("varied universe");
            for stage in 0..=last {
                let node = &graph.nodes[stage];
                if stage == vary_stage {
                    let vs = &graph.variations[set];
                    let expr = &vs.exprs[tag];
                    self.ensure_inputs(base, row, entry, expr.slots(), true)?;
                    let ctx = Ctx {
                        base,
                        row,
                        nominal: &self.nominal,
                        over: Some(&self.over),
                    };
                    let v = expr
                        .eval(&ctx)
                        .map_err(|source| EngineError::Eval {
                            entry,
                            stage,
                            universe: label.clone(),
                            source,
                        })?
                        .into_owned();
                    self.over[vs.target_slot] = Some(v);
                    continue;
                }
                let evaluate = plan.eval[stage];
                match node {
                    Node::Define { expr, slot, .. } if evaluate => {
                        self.ensure_inputs(base, row, entry, expr.slots(), true)?;
                        let ctx = Ctx {
                            base,
                            row,
                            nominal: &self.nominal,
                            over: Some(&self.over),
                        };
                        let v = expr
                            .eval(&ctx)
                            .map_err(|source| EngineError::Eval {
                                entry,
                                stage,
                                universe: label.clone(),
                                source,
                            })?
                            .into_owned();
                        self.over[*slot] = Some(v);
                    }
                    Node::Filter { expr, .. } => {
                        let pass = if evaluate {
                            self.ensure_inputs(base, row, entry, expr.slots(), true)?;
                            let ctx = Ctx {
                                base,
                                row,
                                nominal: &self.nominal,
                                over: Some(&self.over),
                            };
                            expr.eval(&ctx)
                                .map_err(|source| EngineError::Eval {
                                    entry,
                                    stage,
                                    universe: label.clone(),
                                    source,
                                })?
                                .as_bool()
                                .expect("filter typed BOOL")
                        } else {
                            self.nominal_filter(base, row, entry, stage, expr)?
                        };
                        if !pass {
                            break;
                        }
                    }
                    n if n.is_action() && evaluate => {
                        self.fill_action(base, row, entry, stage, plan.index, true)?;
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn walk_nominal(&mut self, base: &[Option<&ColumnData>], row: usize, entry: u64) -> Result<(), EngineError> {
        let graph = self.graph;
        for (stage, node) in graph.nodes.iter().enumerate() {
            match node {
                Node::Define { slot, .. } => self.ensure_nominal(base, row, entry, *slot)?,
                Node::Filter { expr, .. } => {
                    if !self.nominal_filter(base, row, entry, stage, expr)? {
                        break;
                    }
                }
                Node::Snapshot { columns, .. } => {
                    if let Some(out) = self.snapshot.as_mut() {
                        let ctx = Ctx {
                            base,
                            row,
                            nominal: &self.nominal,
                            over: None,
                        };
                        for ((_, col), (_, slot, _)) in out.iter_mut().zip(columns) {
                            push_value(col, &ctx.get(*slot));
                        }
                    }
                }
                n if n.is_action() => {
                    self.fill_action(base, row, entry, stage, self.plan.nominal_index, false)?
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn finish(&mut self) -> ResultSet {
        let graph = self.graph;
        let mut set = ResultSet::new();
        let nominal = self.results[self.plan.nominal_index].clone();
        for u in &self.plan.universes {
            if let (Some(nom), Some(mine)) = (&nominal, self.results[u.index].as_mut()) {
                for &stage in &u.copy_from_nominal {
                    let r = match &graph.nodes[stage] {
                        Node::Histo { result, .. } | Node::Sum { result, .. } | Node::Count { result } => *result,
                        _ => continue,
                    };
                    mine[r] = nom[r].clone();
                }
            }
        }
        for (i, u) in graph.universes.iter().enumerate() {
            if let Some(values) = self.results[i].take() {
                let named = graph
                    .results
                    .iter()
                    .map(|(n, _)| n.clone())
                    .zip(values)
                    .collect();
                set.universes.push((u.label.clone(), named));
            }
        }
        set
    }
}

/// Splits each file into one range per cluster.
pub fn cluster_ranges(handles: &[Arc<DatasetHandle>]) -> Vec<EntryRange> {
    handles
        .iter()
        .flat_map(|h| {
            h.clusters
                .iter()
                .map(|c| EntryRange::new(h.uri.clone(), c.entry_start, c.entry_end()))
        })
        .collect()
}

/// Runs the graph over whole files on `nthreads` threads and merges the
/// per-range results in range order.
pub fn run_local(graph: &ComputationGraph, dataset: &[String], nthreads: usize) -> Result<PartialResult, EngineError> {
    run_local_mode(graph, dataset, nthreads, &Mode::SinglePass)
}

pub fn run_local_mode(
    graph: &ComputationGraph,
    dataset: &[String],
    nthreads: usize,
    mode: &Mode,
) -> Result<PartialResult, EngineError> {
    let nthreads = nthreads.max(1);
    let mut handles = Vec::with_capacity(dataset.len());
    for uri in dataset {
        handles.push(Arc::clone(colstore::open(uri)?.handle()));
    }
    let ranges = cluster_ranges(&handles);
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<Result<PartialResult, EngineError>>>> =
        Mutex::new((0..ranges.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..nthreads.min(ranges.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= ranges.len() || failed.load(Ordering::Relaxed) {
                    break;
                }
                let r = run_range_with(graph, &ranges[i], mode, &RangeOptions {
                    range_id: Some(format!("{i}")),
                    ..Default::default()
                });
                if r.is_err() {
                    failed.store(true, Ordering::Relaxed);
                }
                slots.lock().expect("no panics while held")[i] = Some(r);
            });
        }
    });
    let mut merged = PartialResult::default();
    for r in slots.into_inner().expect("threads joined").into_iter().flatten() {
        merged.merge(&r?)?;
    }
    merged.results.sort_by_labels(&graph.universe_labels());
    Ok(merged)
}
