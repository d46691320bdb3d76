//! Scenario configuration and the trace-bundle runner.

use super::{step, PoolConfig, PoolState, SimError, Simulation};
use crate::pool::PoolId;
use crate::trace::{
    self, CycleMeasurement, InterruptionEvent, Outcome, ProbeRecord, RunningRecord,
    SCHEMA_VERSION,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// A scenario file: the list of pools to simulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    #[serde(default = "default_v")]
    pub v: u8,
    #[serde(rename = "pool")]
    pub pools: Vec<PoolConfig>,
}

fn default_v() -> u8 {
    SCHEMA_VERSION
}

impl ScenarioSpec {
    pub fn new(pools: Vec<PoolConfig>) -> Self {
        Self {
            v: SCHEMA_VERSION,
            pools,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SimError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| SimError::ScenarioFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let spec: ScenarioSpec = toml::from_str(&text).map_err(|e| SimError::ScenarioFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        for cfg in &spec.pools {
            cfg.validate()?;
        }
        Ok(spec)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SimError> {
        let path = path.as_ref();
        let text = toml::to_string(self).map_err(|e| SimError::ScenarioFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(path, text).map_err(|e| SimError::ScenarioFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

/// Built-in pool grid used when no scenario file is given.
///
/// Pools rotate through four dwell regimes, from long-lived capacity to
/// rapid churn, and vary in foreign-occupancy pressure, so a single bundle
/// contains stable, degraded, and flapping availability histories.
pub fn default_scenario(n_pools: usize) -> Vec<PoolConfig> {
    const TYPES: [&str; 8] = [
        "m5.large",
        "c5.xlarge",
        "r5.large",
        "m5.2xlarge",
        "c5.2xlarge",
        "r5.xlarge",
        "m6i.large",
        "c6i.xlarge",
    ];
    const REGIONS: [(&str, &str); 4] = [
        ("us-east-1", "us-east-1a"),
        ("us-west-2", "us-west-2b"),
        ("eu-west-1", "eu-west-1a"),
        ("ap-northeast-1", "ap-northeast-1c"),
    ];
    // (mean_up_minutes, mean_down_minutes)
    const REGIMES: [(f64, f64); 4] = [(480.0, 20.0), (200.0, 25.0), (60.0, 15.0), (15.0, 10.0)];

    (0..n_pools)
        .map(|i| {
            let (instance_type, (region, zone)) =
                (TYPES[i % TYPES.len()], REGIONS[(i / TYPES.len()) % REGIONS.len()]);
            let zone_suffix = (i / (TYPES.len() * REGIONS.len())) % 3;
            let zone = if zone_suffix == 0 {
                zone.to_string()
            } else {
                format!("{zone}{zone_suffix}")
            };
            let (mean_up, mean_down) = REGIMES[i % REGIMES.len()];
            PoolConfig {
                pool: PoolId::new(instance_type, region, zone),
                capacity_up: 25,
                capacity_down: 0,
                mean_up_minutes: mean_up,
                mean_down_minutes: mean_down,
                foreign_mean: 2.0 + (i % 3) as f64,
                foreign_jitter: 1.5 + ((i / 3) % 3) as f64 * 0.5,
                reclaim_delay_mean_s: 30.0,
                reclaim_delay_cap_s: 180.0,
                probe_overshoot_prob: 0.005,
                tenant_target: 10,
            }
        })
        .collect()
}

/// In-memory result of a scenario run: all four trace kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioRecords {
    pub probes: Vec<ProbeRecord>,
    pub cycles: Vec<CycleMeasurement>,
    pub running: Vec<RunningRecord>,
    pub interruptions: Vec<InterruptionEvent>,
}

/// Paths of a written trace bundle.
#[derive(Debug, Clone)]
pub struct TraceBundle {
    pub dir: PathBuf,
    pub probes: PathBuf,
    pub cycles: PathBuf,
    pub running: PathBuf,
    pub interruptions: PathBuf,
}

impl TraceBundle {
    pub fn in_dir(dir: impl Into<PathBuf>) -> Self {
        let dir = dir.into();
        Self {
            probes: dir.join("probes.jsonl"),
            cycles: dir.join("cycles.jsonl"),
            running: dir.join("running.jsonl"),
            interruptions: dir.join("interruptions.jsonl"),
            dir,
        }
    }

    pub fn read_probes(&self) -> Result<Vec<ProbeRecord>, trace::TraceError> {
        trace::read_trace(&self.probes)
    }

    pub fn read_cycles(&self) -> Result<Vec<CycleMeasurement>, trace::TraceError> {
        trace::read_trace(&self.cycles)
    }

    pub fn read_running(&self) -> Result<Vec<RunningRecord>, trace::TraceError> {
        trace::read_trace(&self.running)
    }

    pub fn read_interruptions(&self) -> Result<Vec<InterruptionEvent>, trace::TraceError> {
        trace::read_trace(&self.interruptions)
    }
}

/// Output of one fully simulated pool, before merging.
struct PoolRun {
    probes: Vec<ProbeRecord>,
    cycles: Vec<CycleMeasurement>,
    running: Vec<RunningRecord>,
    interruptions: Vec<InterruptionEvent>,
}

fn run_pool(
    cfg: &PoolConfig,
    total_cycles: u32,
    interval_min: u32,
    n_probe: u32,
    seed: u64,
) -> PoolRun {
    let interval_s = interval_min as i64 * 60;
    let mut rng = super::pool_rng(seed, &cfg.pool);
    let mut state = PoolState::new(cfg, &mut rng);
    let mut out = PoolRun {
        probes: Vec::with_capacity((total_cycles * n_probe) as usize),
        cycles: Vec::with_capacity(total_cycles as usize),
        running: Vec::with_capacity(total_cycles as usize),
        interruptions: Vec::new(),
    };
    for cycle in 1..=total_cycles {
        let now = cycle as i64 * interval_s;
        let step_out = step(cfg, &mut state, now, cycle, &mut rng);
        out.interruptions.extend(step_out.interruptions);
        out.running.push(step_out.running);
        let s = super::probe(cfg, &state, n_probe, &mut rng);
        for request_index in 0..n_probe {
            out.probes.push(ProbeRecord {
                v: SCHEMA_VERSION,
                ts: now,
                cycle,
                pool: cfg.pool.clone(),
                request_index,
                outcome: if request_index < s {
                    Outcome::Accepted
                } else {
                    Outcome::Rejected
                },
                error: None,
            });
        }
        out.cycles.push(CycleMeasurement {
            v: SCHEMA_VERSION,
            cycle,
            pool: cfg.pool.clone(),
            successes: s,
            requested: n_probe,
            interval_min,
        });
    }
    out
}

/// Runs every pool for `duration_min` and returns the merged records.
/// Deterministic for a fixed (configs, seed): pools carry independent RNG
/// streams, and the merge order is (cycle, config order).
pub fn run_scenario_records(
    configs: &[PoolConfig],
    duration_min: u32,
    interval_min: u32,
    n_probe: u32,
    seed: u64,
) -> Result<ScenarioRecords, SimError> {
    // Validation happens through Simulation::new rules; reuse them without
    // building slots twice.
    Simulation::new(configs, interval_min, n_probe, seed)?;
    if interval_min == 0 || duration_min % interval_min != 0 {
        return Err(SimError::Duration {
            duration_min,
            interval_min,
        });
    }
    let total_cycles = duration_min / interval_min;

    let runs: Vec<PoolRun> = configs
        .par_iter()
        .map(|cfg| run_pool(cfg, total_cycles, interval_min, n_probe, seed))
        .collect();

    let mut records = ScenarioRecords {
        probes: Vec::new(),
        cycles: Vec::new(),
        running: Vec::new(),
        interruptions: Vec::new(),
    };
    for c in 0..total_cycles as usize {
        for run in &runs {
            records
                .probes
                .extend_from_slice(&run.probes[c * n_probe as usize..(c + 1) * n_probe as usize]);
            records.cycles.push(run.cycles[c].clone());
            records.running.push(run.running[c].clone());
        }
    }
    let pool_order: Vec<&PoolId> = configs.iter().map(|c| &c.pool).collect();
    let order_of = |p: &PoolId| pool_order.iter().position(|q| *q == p).unwrap_or(usize::MAX);
    let mut interruptions: Vec<InterruptionEvent> = runs
        .iter()
        .flat_map(|r| r.interruptions.iter().cloned())
        .collect();
    interruptions.sort_by(|a, b| {
        (a.ts, order_of(&a.pool), &a.node_id).cmp(&(b.ts, order_of(&b.pool), &b.node_id))
    });
    records.interruptions = interruptions;
    Ok(records)
}

/// Writes the four bundle files for a scenario run.
pub fn run_scenario(
    configs: &[PoolConfig],
    duration_min: u32,
    interval_min: u32,
    n_probe: u32,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<TraceBundle, SimError> {
    let records = run_scenario_records(configs, duration_min, interval_min, n_probe, seed)?;
    write_bundle(&records, out_dir)
}

/// Writes previously computed scenario records as a bundle.
pub fn write_bundle(
    records: &ScenarioRecords,
    out_dir: impl AsRef<Path>,
) -> Result<TraceBundle, SimError> {
    let bundle = TraceBundle::in_dir(out_dir.as_ref());
    std::fs::create_dir_all(&bundle.dir).map_err(|e| SimError::ScenarioFile {
        path: bundle.dir.display().to_string(),
        message: e.to_string(),
    })?;
    trace::write_trace(&records.probes, &bundle.probes)?;
    trace::write_trace(&records.cycles, &bundle.cycles)?;
    trace::write_trace(&records.running, &bundle.running)?;
    trace::write_trace(&records.interruptions, &bundle.interruptions)?;
    Ok(bundle)
}
