//! Spot capacity probing toolkit.
//!
//! The library covers the full pipeline for studying spot instance
//! availability against a simulated provider:
//!
//! - [`sim`] — discrete-event simulation of shared capacity pools that
//!   answers probe requests and reclaims tenant nodes under pressure,
//!   producing probe / cycle / running / interruption traces.
//! - [`collector`] — the probing protocol itself: submit N concurrent spot
//!   requests per cycle, cancel each one as soon as provisioning starts,
//!   record accepted/rejected outcomes under a rate limit.
//! - [`features`] — incremental SR / UR / CUT availability features and
//!   horizon-based binary labeling.
//! - [`predictor`] — from-scratch logistic regression and gradient-boosted
//!   trees over the features, with F1-macro evaluation across horizons.
//! - [`analysis`] — probe-vs-actual comparison counts, co-interruption
//!   proximity CDFs, Pearson feature fidelity, and a monitoring cost model.
//! - [`replay`] — trace-driven workload replay comparing scheduling
//!   strategies (Always Run, SJF, predictor-guided).
//! - [`pipeline`] — one config, all stages, reproducible artifact directory.
//!
//! All trace files are JSONL, one record per line; see `docs/formats.md` in
//! the repository for the schemas.

pub mod analysis;
pub mod collector;
pub mod features;
pub mod pipeline;
pub mod pool;
pub mod predictor;
pub mod replay;
pub mod sim;
pub mod trace;

pub use pool::PoolId;
pub use trace::{
    CycleMeasurement, FeatureRecord, InterruptionEvent, Outcome, ProbeRecord, RunningRecord,
    TraceError, TraceKind,
};
