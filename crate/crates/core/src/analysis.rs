//! Fidelity and measurement analyses over collected traces.

use crate::pool::PoolId;
use crate::predictor::Feature;
use crate::trace::{CycleMeasurement, FeatureRecord, InterruptionEvent, RunningRecord};
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("misaligned cycle sets for pool {pool}: missing in running {missing_in_running:?}, missing in cycles {missing_in_cycles:?}")]
    Misaligned {
        pool: PoolId,
        missing_in_running: Vec<u32>,
        missing_in_cycles: Vec<u32>,
    },
    #[error("no qualifying co-interruption pairs (every pool has at most one interrupted node)")]
    NoQualifyingPairs,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("feature traces misaligned for pool {pool} at position {position}: cycle {left} vs {right}")]
    FeatureMisaligned {
        pool: PoolId,
        position: usize,
        left: u32,
        right: u32,
    },
    #[error("invalid cost parameters: {0}")]
    InvalidCostParams(String),
    #[error("csv write to {path}: {message}")]
    Csv { path: String, message: String },
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Per-time-point comparison of probe success count vs actual running count.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    /// Points where the actual running count exceeded the probe count.
    pub actual_gt: u64,
    pub equal: u64,
    /// Points where the probe count exceeded the actual running count.
    pub actual_lt: u64,
    pub total: u64,
    pub pct_actual_gt: f64,
    pub pct_equal: f64,
    pub pct_actual_lt: f64,
}

/// Aligns cycles and running records per (pool, cycle) and counts the three
/// outcomes. The counts partition the aligned point set exactly.
pub fn compare(
    cycles: &[CycleMeasurement],
    running: &[RunningRecord],
) -> Result<CompareReport, AnalysisError> {
    let mut s_by_key: BTreeMap<(PoolId, u32), u32> = BTreeMap::new();
    for m in cycles {
        s_by_key.insert((m.pool.clone(), m.cycle), m.successes);
    }
    let mut r_by_key: BTreeMap<(PoolId, u32), u32> = BTreeMap::new();
    for r in running {
        r_by_key.insert((r.pool.clone(), r.cycle), r.running);
    }

    // Any key on one side only is a misalignment; report per pool.
    let mut missing: BTreeMap<PoolId, (Vec<u32>, Vec<u32>)> = BTreeMap::new();
    for (pool, cycle) in s_by_key.keys() {
        if !r_by_key.contains_key(&(pool.clone(), *cycle)) {
            missing.entry(pool.clone()).or_default().0.push(*cycle);
        }
    }
    for (pool, cycle) in r_by_key.keys() {
        if !s_by_key.contains_key(&(pool.clone(), *cycle)) {
            missing.entry(pool.clone()).or_default().1.push(*cycle);
        }
    }
    if let Some((pool, (in_running, in_cycles))) = missing.into_iter().next() {
        return Err(AnalysisError::Misaligned {
            pool,
            missing_in_running: in_running.into_iter().take(10).collect(),
            missing_in_cycles: in_cycles.into_iter().take(10).collect(),
        });
    }

    let mut report = CompareReport {
        actual_gt: 0,
        equal: 0,
        actual_lt: 0,
        total: 0,
        pct_actual_gt: 0.0,
        pct_equal: 0.0,
        pct_actual_lt: 0.0,
    };
    for (key, s) in &s_by_key {
        let r = r_by_key[key];
        report.total += 1;
        match r.cmp(s) {
            std::cmp::Ordering::Greater => report.actual_gt += 1,
            std::cmp::Ordering::Equal => report.equal += 1,
            std::cmp::Ordering::Less => report.actual_lt += 1,
        }
    }
    if report.total > 0 {
        let t = report.total as f64;
        report.pct_actual_gt = round2(report.actual_gt as f64 / t * 100.0);
        report.pct_equal = round2(report.equal as f64 / t * 100.0);
        report.pct_actual_lt = round2(report.actual_lt as f64 / t * 100.0);
    }
    Ok(report)
}

/// Empirical CDF of co-interruption proximity at 1-second resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityCdf {
    /// (proximity seconds, cumulative fraction), strictly increasing in
    /// seconds, one point per distinct observed proximity.
    pub points: Vec<(u64, f64)>,
    /// Events with at least one other-node event in the same pool.
    pub included: usize,
    /// Events excluded because their pool held no other interrupted node.
    pub excluded: usize,
}

impl ProximityCdf {
    /// Cumulative fraction at the given proximity.
    pub fn value_at(&self, seconds: u64) -> f64 {
        match self.points.binary_search_by_key(&seconds, |(s, _)| *s) {
            Ok(i) => self.points[i].1,
            Err(0) => 0.0,
            Err(i) => self.points[i - 1].1,
        }
    }
}

/// Per event, the proximity is the minimum |Δts| to an interruption of a
/// *different* node in the same pool; pools with a single interrupted node
/// contribute nothing.
pub fn co_interrupt_cdf(events: &[InterruptionEvent]) -> Result<ProximityCdf, AnalysisError> {
    let mut by_pool: BTreeMap<PoolId, Vec<(i64, &str)>> = BTreeMap::new();
    for e in events {
        by_pool
            .entry(e.pool.clone())
            .or_default()
            .push((e.ts, e.node_id.as_str()));
    }

    let mut proximities: Vec<u64> = Vec::new();
    let mut excluded = 0usize;
    for (_, mut evs) in by_pool {
        evs.sort();
        for i in 0..evs.len() {
            let (ts, node) = evs[i];
            let mut best: Option<u64> = None;
            // Scan outward from i; stop once the time gap exceeds the best.
            let mut j = i;
            while j > 0 {
                j -= 1;
                let gap = (ts - evs[j].0) as u64;
                if best.is_some_and(|b| gap > b) {
                    break;
                }
                if evs[j].1 != node {
                    best = Some(best.map_or(gap, |b| b.min(gap)));
                    break; // sorted: earlier events only get farther
                }
            }
            let mut j = i + 1;
            while j < evs.len() {
                let gap = (evs[j].0 - ts) as u64;
                if best.is_some_and(|b| gap > b) {
                    break;
                }
                if evs[j].1 != node {
                    best = Some(best.map_or(gap, |b| b.min(gap)));
                    break;
                }
                j += 1;
            }
            match best {
                Some(p) => proximities.push(p),
                None => excluded += 1,
            }
        }
    }
    if proximities.is_empty() {
        return Err(AnalysisError::NoQualifyingPairs);
    }
    proximities.sort_unstable();
    let n = proximities.len() as f64;
    let mut points: Vec<(u64, f64)> = Vec::new();
    for (i, p) in proximities.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match points.last_mut() {
            Some((last, f)) if last == p => *f = frac,
            _ => points.push((*p, frac)),
        }
    }
    Ok(ProximityCdf {
        points,
        included: proximities.len(),
        excluded,
    })
}

/// Two-pass Pearson correlation. Returns `None` when either series has zero
/// variance (the correlation is undefined there).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch {
            left: x.len(),
            right: y.len(),
        });
    }
    if x.is_empty() {
        return Ok(None);
    }
    let n = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / n;
    let mean_y = y.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x == 0.0 || var_y == 0.0 {
        return Ok(None);
    }
    Ok(Some((cov / (var_x * var_y).sqrt()).clamp(-1.0, 1.0)))
}

/// Per-pool, per-feature correlation between probe-derived and
/// actual-derived features.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityRow {
    pub pool: PoolId,
    pub feature: Feature,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub rows: Vec<FidelityRow>,
    /// (pool, feature) pairs excluded because one or both series were
    /// constant, making the correlation undefined.
    pub excluded: Vec<(PoolId, Feature)>,
}

impl FidelityReport {
    /// Sorted correlation values for one feature — CDF plot data.
    pub fn cdf(&self, feature: Feature) -> Vec<f64> {
        let mut rs: Vec<f64> = self
            .rows
            .iter()
            .filter(|row| row.feature == feature)
            .map(|row| row.r)
            .collect();
        rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        rs
    }

    pub fn median(&self, feature: Feature) -> Option<f64> {
        let rs = self.cdf(feature);
        if rs.is_empty() {
            return None;
        }
        Some(rs[rs.len() / 2])
    }
}

/// Pearson r per pool per feature between two time-aligned feature traces
/// (probe-derived vs actual-derived, typically).
pub fn feature_fidelity(
    probe_features: &[FeatureRecord],
    actual_features: &[FeatureRecord],
) -> Result<FidelityReport, AnalysisError> {
    let group = |records: &[FeatureRecord]| -> BTreeMap<PoolId, Vec<FeatureRecord>> {
        let mut map: BTreeMap<PoolId, Vec<FeatureRecord>> = BTreeMap::new();
        for r in records {
            map.entry(r.pool.clone()).or_default().push(r.clone());
        }
        map
    };
    let left = group(probe_features);
    let right = group(actual_features);
    if left.len() != right.len() {
        return Err(AnalysisError::LengthMismatch {
            left: left.len(),
            right: right.len(),
        });
    }

    let mut report = FidelityReport {
        rows: Vec::new(),
        excluded: Vec::new(),
    };
    for (pool, lrecs) in &left {
        let rrecs = right.get(pool).ok_or_else(|| AnalysisError::LengthMismatch {
            left: left.len(),
            right: right.len(),
        })?;
        if lrecs.len() != rrecs.len() {
            return Err(AnalysisError::LengthMismatch {
                left: lrecs.len(),
                right: rrecs.len(),
            });
        }
        for (i, (a, b)) in lrecs.iter().zip(rrecs).enumerate() {
            if a.cycle != b.cycle {
                return Err(AnalysisError::FeatureMisaligned {
                    pool: pool.clone(),
                    position: i,
                    left: a.cycle,
                    right: b.cycle,
                });
            }
        }
        for feature in Feature::ALL {
            let xs: Vec<f64> = lrecs.iter().map(|r| feature.value(r)).collect();
            let ys: Vec<f64> = rrecs.iter().map(|r| feature.value(r)).collect();
            match pearson(&xs, &ys)? {
                Some(r) => report.rows.push(FidelityRow {
                    pool: pool.clone(),
                    feature,
                    r,
                }),
                None => report.excluded.push((pool.clone(), feature)),
            }
        }
    }
    Ok(report)
}

/// Parameters of the monitoring cost model. The defaults describe a modest
/// 10-node, 24-hour study probed every 10 minutes.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostParams {
    pub instance_price_per_hour: f64,
    pub nodes: u32,
    pub duration_hours: f64,
    pub probe_interval_min: f64,
    /// Seconds an instance is billed per launch under periodic probing.
    pub billed_seconds_per_probe_launch: f64,
    pub invocations_per_cycle: u32,
    pub invocation_cost: f64,
    pub storage_cost_per_record: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            instance_price_per_hour: 0.10,
            nodes: 10,
            duration_hours: 24.0,
            probe_interval_min: 10.0,
            billed_seconds_per_probe_launch: 60.0,
            invocations_per_cycle: 10,
            invocation_cost: 4.0e-5,
            storage_cost_per_record: 2.5e-5,
        }
    }
}

/// Costs of the three monitoring approaches over the study duration.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    /// Keep every monitored node running for the whole study.
    pub continuous: f64,
    /// Launch (and get billed for) instances briefly at every probe cycle.
    pub periodic_probe: f64,
    /// Cancel requests during provisioning: invocation and storage only.
    pub ddd: f64,
    pub continuous_over_ddd: f64,
    pub periodic_over_ddd: f64,
}

pub fn cost_model(p: &CostParams) -> Result<CostReport, AnalysisError> {
    if p.instance_price_per_hour < 0.0
        || p.duration_hours < 0.0
        || p.probe_interval_min <= 0.0
        || p.billed_seconds_per_probe_launch < 0.0
        || p.invocation_cost < 0.0
        || p.storage_cost_per_record < 0.0
    {
        return Err(AnalysisError::InvalidCostParams(
            "negative or zero-interval parameters".into(),
        ));
    }
    let total_minutes = p.duration_hours * 60.0;
    let ratio = total_minutes / p.probe_interval_min;
    if p.duration_hours > 0.0 && (ratio - ratio.round()).abs() > 1e-9 {
        return Err(AnalysisError::InvalidCostParams(format!(
            "probe interval {} min does not divide duration {} h",
            p.probe_interval_min, p.duration_hours
        )));
    }
    let cycles = ratio.round();
    let overhead =
        cycles * p.invocations_per_cycle as f64 * (p.invocation_cost + p.storage_cost_per_record);
    let continuous = p.instance_price_per_hour * p.nodes as f64 * p.duration_hours;
    let periodic_probe = p.instance_price_per_hour
        * p.nodes as f64
        * (p.billed_seconds_per_probe_launch / 3600.0)
        * cycles
        + overhead;
    let ddd = overhead;
    let ratio_of = |a: f64| if ddd > 0.0 { a / ddd } else { f64::NAN };
    Ok(CostReport {
        continuous,
        periodic_probe,
        ddd,
        continuous_over_ddd: ratio_of(continuous),
        periodic_over_ddd: ratio_of(periodic_probe),
    })
}

/// Writes (seconds, fraction) CDF points as CSV.
pub fn write_cdf_csv(cdf: &ProximityCdf, path: impl AsRef<Path>) -> Result<(), AnalysisError> {
    let path = path.as_ref();
    let err = |message: String| AnalysisError::Csv {
        path: path.display().to_string(),
        message,
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| err(e.to_string()))?;
    w.write_record(["proximity_s", "cumulative_fraction"])
        .map_err(|e| err(e.to_string()))?;
    for (s, f) in &cdf.points {
        w.write_record([s.to_string(), format!("{f:.6}")])
            .map_err(|e| err(e.to_string()))?;
    }
    w.flush().map_err(|e| err(e.to_string()))
}
