//! Trace-driven workload replay over per-pool availability sequences.
//!
//! Availability is piecewise-constant per cycle (Available iff the running
//! count equals the tenant target); interruptions take effect at cycle
//! boundaries, and an interrupted query loses all accumulated progress and
//! is retried from the front of the queue. One query runs at a time with
//! instantaneous dispatch.
//!
//! Strategies:
//! - Always Run: launch the next queued query the moment the pool is
//!   available and nothing is running.
//! - SJF: same loop over a queue pre-sorted by ascending duration.
//! - Predict: consult a trained availability model at each cycle boundary
//!   while idle; when it forecasts Unavailable, defer launching for the
//!   model's prediction horizon (idle time accrues). Running queries are
//!   never preempted by predictions; the deferral restarts if the model
//!   still says Unavailable when the timer expires.

use crate::features::{featurize, FeatureError, FeaturizeOptions};
use crate::pool::PoolId;
use crate::predictor::{PredictorError, TrainedModel};
use crate::trace::{CycleMeasurement, FeatureRecord, RunningRecord};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("workload: {0}")]
    Workload(String),
    #[error("strategy 'predict' requires a trained model for horizon {0} min")]
    MissingModel(u32),
    #[error("pool {pool}: cycle trace and running trace are misaligned ({cycles} vs {running})")]
    TraceMismatch {
        pool: PoolId,
        cycles: usize,
        running: usize,
    },
    #[error("empty availability trace for pool {0}")]
    EmptyTrace(PoolId),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error("csv write to {path}: {message}")]
    Csv { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: u32,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    AlwaysRun,
    Sjf,
    Predict,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::AlwaysRun => write!(f, "always_run"),
            Strategy::Sjf => write!(f, "sjf"),
            Strategy::Predict => write!(f, "predict"),
        }
    }
}

impl Strategy {
    pub fn parse(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "always_run" | "ar" | "always" => Ok(Strategy::AlwaysRun),
            "sjf" => Ok(Strategy::Sjf),
            "predict" | "predict_ar" | "predict-ar" => Ok(Strategy::Predict),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

/// Generates `count` query durations, log-uniform in [min_s, max_s] and
/// rescaled so the total is exactly `total_minutes`. Deterministic per seed.
pub fn gen_workload(
    count: u32,
    total_minutes: f64,
    min_s: f64,
    max_s: f64,
    seed: u64,
) -> Result<Vec<Query>, ReplayError> {
    if count < 1 {
        return Err(ReplayError::Workload("count must be >= 1".into()));
    }
    if !(min_s > 0.0 && min_s < max_s) {
        return Err(ReplayError::Workload(format!(
            "need 0 < min_s < max_s, got {min_s} / {max_s}"
        )));
    }
    let total_s = total_minutes * 60.0;
    if count == 1 {
        return Ok(vec![Query {
            id: 0,
            duration_s: total_s,
        }]);
    }
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"workload");
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let uniform = Uniform::new_inclusive(0.0f64, 1.0).expect("valid range");
    const FLOOR_S: f64 = 0.1;
    for _attempt in 0..100 {
        let raw: Vec<f64> = (0..count)
            .map(|_| {
                let u = uniform.sample(&mut rng);
                (min_s.ln() + u * (max_s.ln() - min_s.ln())).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        let scale = total_s / sum;
        let durations: Vec<f64> = raw.iter().map(|d| d * scale).collect();
        if durations.iter().all(|d| *d >= FLOOR_S) {
            return Ok(durations
                .into_iter()
                .enumerate()
                .map(|(i, duration_s)| Query {
                    id: i as u32,
                    duration_s,
                })
                .collect());
        }
    }
    Err(ReplayError::Workload(format!(
        "rescaling kept pushing durations below the {FLOOR_S} s floor after 100 attempts"
    )))
}

/// Loads queries from a CSV with header `id,duration_s`.
pub fn load_workload_csv(path: impl AsRef<Path>) -> Result<Vec<Query>, ReplayError> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| ReplayError::Csv {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let q: Query = row.map_err(|e| ReplayError::Csv {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if q.duration_s <= 0.0 {
            return Err(ReplayError::Workload(format!(
                "query {} has non-positive duration {}",
                q.id, q.duration_s
            )));
        }
        out.push(q);
    }
    if out.is_empty() {
        return Err(ReplayError::Workload("empty workload file".into()));
    }
    Ok(out)
}

/// One pool's replayable trace: per-cycle availability plus the feature
/// records the predictor consumes.
#[derive(Debug, Clone)]
pub struct PoolTrace {
    pub pool: PoolId,
    pub interval_min: u32,
    /// available[i] is cycle i+1.
    pub available: Vec<bool>,
    /// features[i] is cycle i+1; required only for the Predict strategy.
    pub features: Vec<FeatureRecord>,
}

impl PoolTrace {
    /// Builds the trace for one pool from bundle records. `window_min`
    /// controls the feature window the predictor will see.
    pub fn build(
        pool: &PoolId,
        cycles: &[CycleMeasurement],
        running: &[RunningRecord],
        window_min: u32,
        n_target: Option<u32>,
    ) -> Result<Self, ReplayError> {
        let pool_cycles: Vec<CycleMeasurement> =
            cycles.iter().filter(|c| &c.pool == pool).cloned().collect();
        let pool_running: Vec<RunningRecord> =
            running.iter().filter(|r| &r.pool == pool).cloned().collect();
        if pool_running.is_empty() {
            return Err(ReplayError::EmptyTrace(pool.clone()));
        }
        if pool_cycles.len() != pool_running.len() {
            return Err(ReplayError::TraceMismatch {
                pool: pool.clone(),
                cycles: pool_cycles.len(),
                running: pool_running.len(),
            });
        }
        let target = match n_target {
            Some(n) => n,
            None => pool_running.iter().map(|r| r.running).max().unwrap_or(0),
        };
        let available: Vec<bool> = pool_running.iter().map(|r| r.running == target).collect();
        let interval_min = pool_cycles.first().map(|c| c.interval_min).unwrap_or(3);
        let features = featurize(
            &pool_cycles,
            &pool_running,
            &FeaturizeOptions {
                window_min,
                horizons_min: vec![],
                n_target: Some(target),
            },
        )?;
        Ok(Self {
            pool: pool.clone(),
            interval_min,
            available,
            features,
        })
    }
}

/// Metrics of one replay run.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayOutcome {
    pub strategy: Strategy,
    pub horizon_min: u32,
    /// Progress discarded at interruptions.
    pub lost_s: f64,
    /// Available time spent deliberately not running anything.
    pub idle_s: f64,
    /// Sum of durations of completed queries.
    pub useful_s: f64,
    /// Available time with a query running (= useful + lost).
    pub busy_s: f64,
    /// Available time while work remained (= busy + idle).
    pub active_available_s: f64,
    /// Completion time of the last query, or trace end if queries remain.
    pub makespan_s: f64,
    pub completed: u32,
    pub incomplete: bool,
    pub deferrals: u32,
    pub interruptions_hit: u32,
}

/// Replays one workload against one pool trace.
pub fn replay(
    trace: &PoolTrace,
    queries: &[Query],
    strategy: Strategy,
    model: Option<&TrainedModel>,
    horizon_min: u32,
) -> Result<ReplayOutcome, ReplayError> {
    if trace.available.is_empty() {
        return Err(ReplayError::EmptyTrace(trace.pool.clone()));
    }
    let model = match strategy {
        Strategy::Predict => {
            Some(model.ok_or(ReplayError::MissingModel(horizon_min))?)
        }
        _ => None,
    };

    let mut queue: VecDeque<Query> = queries.iter().cloned().collect();
    if strategy == Strategy::Sjf {
        let mut sorted: Vec<Query> = queue.into_iter().collect();
        sorted.sort_by(|a, b| {
            a.duration_s
                .partial_cmp(&b.duration_s)
                .expect("finite durations")
                .then(a.id.cmp(&b.id))
        });
        queue = sorted.into();
    }

    let dt = trace.interval_min as f64 * 60.0;
    let total = queries.len() as u32;
    let mut running: Option<(Query, f64)> = None;
    let mut defer_until = f64::NEG_INFINITY;
    let mut out = ReplayOutcome {
        strategy,
        horizon_min,
        lost_s: 0.0,
        idle_s: 0.0,
        useful_s: 0.0,
        busy_s: 0.0,
        active_available_s: 0.0,
        makespan_s: 0.0,
        completed: 0,
        incomplete: false,
        deferrals: 0,
        interruptions_hit: 0,
    };
    let mut last_completion: Option<f64> = None;

    for (i, &avail) in trace.available.iter().enumerate() {
        let t0 = i as f64 * dt;
        let t1 = t0 + dt;
        if !avail {
            // Interruption takes effect at the boundary: the running query
            // loses all progress and is retried from the queue front.
            if let Some((q, progress)) = running.take() {
                out.lost_s += progress;
                out.interruptions_hit += 1;
                queue.push_front(q);
            }
            continue;
        }
        if running.is_none() && queue.is_empty() {
            break;
        }

        // Boundary consultation: only while idle, and only when no deferral
        // is already pending.
        let mut deferred = false;
        if let Some(model) = model {
            if running.is_none() && !queue.is_empty() && t0 >= defer_until {
                let record = &trace.features[i];
                let x = model.features_of(record);
                let (_, predicted_available) = model.predict(&x)?;
                if !predicted_available {
                    defer_until = t0 + horizon_min as f64 * 60.0;
                    out.deferrals += 1;
                }
            }
            deferred = t0 < defer_until;
        }

        let mut t = t0;
        while t < t1 {
            match running.take() {
                Some((q, progress)) => {
                    let remaining = q.duration_s - progress;
                    if t + remaining <= t1 {
                        out.busy_s += remaining;
                        out.useful_s += q.duration_s;
                        out.completed += 1;
                        t += remaining;
                        last_completion = Some(t);
                    } else {
                        out.busy_s += t1 - t;
                        running = Some((q, progress + (t1 - t)));
                        t = t1;
                    }
                }
                None => {
                    if queue.is_empty() {
                        break;
                    }
                    if deferred {
                        out.idle_s += t1 - t;
                        t = t1;
                    } else {
                        running = Some((queue.pop_front().unwrap(), 0.0));
                    }
                }
            }
        }
        out.active_available_s += t - t0;
    }

    out.incomplete = out.completed < total;
    out.makespan_s = if out.incomplete {
        trace.available.len() as f64 * dt
    } else {
        last_completion.unwrap_or(0.0)
    };
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub strategies: Vec<Strategy>,
    /// Horizons for the Predict strategy; ignored by the others.
    pub horizons_min: Vec<u32>,
    pub permutations: u32,
    pub seed: u64,
    pub n_target: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct RunRow {
    pub pool: PoolId,
    pub permutation: u32,
    pub outcome: ReplayOutcome,
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub pool: PoolId,
    pub strategy: Strategy,
    pub horizon_min: u32,
    pub runs: u32,
    pub mean_lost_s: f64,
    pub mean_idle_s: f64,
    pub mean_useful_s: f64,
    pub mean_makespan_s: f64,
    pub mean_completed: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub rows: Vec<RunRow>,
    pub summaries: Vec<SummaryRow>,
    /// Requested pools that had no trace in the bundle.
    pub skipped_pools: Vec<PoolId>,
}

fn permutation_of(queries: &[Query], seed: u64, permutation: u32) -> Vec<Query> {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(b"perm");
    hasher.update(permutation.to_le_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(digest);
    let mut out = queries.to_vec();
    out.shuffle(&mut rng);
    out
}

/// Runs every (pool, strategy[, horizon], permutation) cell and averages
/// metrics over permutations per cell group. The same query permutations
/// are reused across pools and strategies so comparisons stay paired.
pub fn run_experiment(
    cycles: &[CycleMeasurement],
    running: &[RunningRecord],
    eval_pools: &[PoolId],
    queries: &[Query],
    models: &[TrainedModel],
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutput, ReplayError> {
    // Expand strategy variants in config order.
    let mut variants: Vec<(Strategy, u32, Option<&TrainedModel>)> = Vec::new();
    for &strategy in &cfg.strategies {
        match strategy {
            Strategy::Predict => {
                for &h in &cfg.horizons_min {
                    let model = models
                        .iter()
                        .find(|m| m.spec.horizon_min == h)
                        .ok_or(ReplayError::MissingModel(h))?;
                    variants.push((strategy, h, Some(model)));
                }
            }
            _ => variants.push((strategy, 0, None)),
        }
    }

    let mut skipped_pools = Vec::new();
    let mut traces: Vec<(PoolId, BTreeMap<u32, PoolTrace>)> = Vec::new();
    for pool in eval_pools {
        if !running.iter().any(|r| &r.pool == pool) {
            skipped_pools.push(pool.clone());
            continue;
        }
        // One trace per distinct model window (features depend on it); a
        // window of the trace interval works for the model-free strategies.
        let mut windows: Vec<u32> = variants
            .iter()
            .filter_map(|(_, _, m)| m.map(|m| m.spec.window_min))
            .collect();
        if windows.is_empty() {
            let interval = cycles
                .iter()
                .find(|c| &c.pool == pool)
                .map(|c| c.interval_min)
                .unwrap_or(3);
            windows.push(interval);
        }
        windows.sort_unstable();
        windows.dedup();
        let mut by_window = BTreeMap::new();
        for w in windows {
            by_window.insert(w, PoolTrace::build(pool, cycles, running, w, cfg.n_target)?);
        }
        traces.push((pool.clone(), by_window));
    }

    let perms: Vec<Vec<Query>> = (0..cfg.permutations)
        .map(|p| permutation_of(queries, cfg.seed, p))
        .collect();

    let mut jobs: Vec<(usize, usize, u32)> = Vec::new();
    for (t_idx, _) in traces.iter().enumerate() {
        for (v_idx, _) in variants.iter().enumerate() {
            for p in 0..cfg.permutations {
                jobs.push((t_idx, v_idx, p));
            }
        }
    }
    let rows: Result<Vec<RunRow>, ReplayError> = jobs
        .par_iter()
        .map(|&(t_idx, v_idx, p)| {
            let (pool, by_window) = &traces[t_idx];
            let (strategy, horizon, model) = &variants[v_idx];
            let window = model.map(|m| m.spec.window_min).unwrap_or_else(|| {
                *by_window.keys().next().expect("at least one window")
            });
            let trace = &by_window[&window];
            let outcome = replay(trace, &perms[p as usize], *strategy, *model, *horizon)?;
            Ok(RunRow {
                pool: pool.clone(),
                permutation: p,
                outcome,
            })
        })
        .collect();
    let rows = rows?;

    let mut summaries = Vec::new();
    for (pool, _) in &traces {
        for (strategy, horizon, _) in &variants {
            let group: Vec<&RunRow> = rows
                .iter()
                .filter(|r| {
                    &r.pool == pool
                        && r.outcome.strategy == *strategy
                        && r.outcome.horizon_min == *horizon
                })
                .collect();
            if group.is_empty() {
                continue;
            }
            let n = group.len() as f64;
            summaries.push(SummaryRow {
                pool: pool.clone(),
                strategy: *strategy,
                horizon_min: *horizon,
                runs: group.len() as u32,
                mean_lost_s: group.iter().map(|r| r.outcome.lost_s).sum::<f64>() / n,
                mean_idle_s: group.iter().map(|r| r.outcome.idle_s).sum::<f64>() / n,
                mean_useful_s: group.iter().map(|r| r.outcome.useful_s).sum::<f64>() / n,
                mean_makespan_s: group.iter().map(|r| r.outcome.makespan_s).sum::<f64>() / n,
                mean_completed: group.iter().map(|r| r.outcome.completed as f64).sum::<f64>() / n,
            });
        }
    }

    Ok(ExperimentOutput {
        rows,
        summaries,
        skipped_pools,
    })
}

pub fn write_results_csv(rows: &[RunRow], path: impl AsRef<Path>) -> Result<(), ReplayError> {
    let path = path.as_ref();
    let err = |message: String| ReplayError::Csv {
        path: path.display().to_string(),
        message,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
    w.write_record([
        "pool",
        "strategy",
        "horizon_min",
        "permutation",
        "lost_s",
        "idle_s",
        "useful_s",
        "busy_s",
        "makespan_s",
        "completed",
        "incomplete",
        "deferrals",
        "interruptions_hit",
    ])
    .map_err(|e| err(e.to_string()))?;
    for r in rows {
        let o = &r.outcome;
        w.write_record([
            r.pool.to_string(),
            o.strategy.to_string(),
            o.horizon_min.to_string(),
            r.permutation.to_string(),
            format!("{:.3}", o.lost_s),
            format!("{:.3}", o.idle_s),
            format!("{:.3}", o.useful_s),
            format!("{:.3}", o.busy_s),
            format!("{:.3}", o.makespan_s),
            o.completed.to_string(),
            o.incomplete.to_string(),
            o.deferrals.to_string(),
            o.interruptions_hit.to_string(),
        ])
        .map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}

pub fn write_summary_csv(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<(), ReplayError> {
    let path = path.as_ref();
    let err = |message: String| ReplayError::Csv {
        path: path.display().to_string(),
        message,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
    w.write_record([
        "pool",
        "strategy",
        "horizon_min",
        "runs",
        "mean_lost_s",
        "mean_idle_s",
        "mean_useful_s",
        "mean_makespan_s",
        "mean_completed",
    ])
    .map_err(|e| err(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.pool.to_string(),
            r.strategy.to_string(),
            r.horizon_min.to_string(),
            r.runs.to_string(),
            format!("{:.3}", r.mean_lost_s),
            format!("{:.3}", r.mean_idle_s),
            format!("{:.3}", r.mean_useful_s),
            format!("{:.3}", r.mean_makespan_s),
            format!("{:.3}", r.mean_completed),
        ])
        .map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}
