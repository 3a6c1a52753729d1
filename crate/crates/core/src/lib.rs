//! Declarative columnar event analysis.
//!
//! An analysis is a JSON pipeline of defines, filters, systematic
//! variations and histogram or scalar results. It compiles into a
//! computation graph and runs in a single pass over the input for every
//! universe at once, either on local threads or across worker processes
//! driven by a central scheduler. A per-file, one-pass-per-variation batch
//! runner is included as a baseline, together with the generator and
//! benchmark harness that compare the two.
//!
//! Modules:
//! - [`colstore`]: chunked columnar file format, pruning reader, data server.
//! - [`exprlang`]: expression parser, type checker and evaluator.
//! - [`hist`]: weighted histograms and mergeable results.
//! - [`graph`]: pipeline specs, graph construction, universe analysis.
//! - [`engine`]: single-pass execution over entry ranges.
//! - [`proto`]: scheduler/worker message framing.
//! - [`cluster`]: scheduler, workers, client submission, fault handling.
//! - [`legacy`]: per-file multi-pass batch baseline.
//! - [`metrics`]: job records, rates, CSV output.
//! - [`bench`](mod@bench): dataset generator, local facility, scenarios and report.

pub mod bench;
pub mod cluster;
pub mod colstore;
pub mod engine;
pub mod exprlang;
pub mod graph;
pub mod hist;
pub mod legacy;
pub mod metrics;
pub mod proto;
pub mod wire;
