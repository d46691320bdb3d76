//! Binary availability classifiers over the SR/UR/CUT features, with
//! horizon/window/feature-set evaluation matrices.

mod boost;
mod linear;
mod metrics;

pub use boost::{best_split, BoostParams, BoostedModel, SplitChoice, Tree, TreeNode};
pub use linear::{LrModel, LrParams};
pub use metrics::{f1_macro, F1Report, MetricError};

use crate::features::round6;
use crate::pool::PoolId;
use crate::trace::{FeatureRecord, SCHEMA_VERSION};
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("empty feature set")]
    EmptyFeatureSet,
    #[error("no rows labeled for horizon {horizon_min} min in window {window_min} min")]
    NoLabeledRows { horizon_min: u32, window_min: u32 },
    #[error("training data contains a single class only ({class})")]
    SingleClass { class: &'static str },
    #[error("pool-level split needs at least 2 pools, got {0}")]
    TooFewPools(usize),
    #[error("train split is empty")]
    EmptyTrain,
    #[error("{0}")]
    Train(String),
    #[error("prediction failed: {0}")]
    Predict(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("model artifact {path}: {message}")]
    Artifact { path: String, message: String },
    #[error("no feature records for window {0} min")]
    MissingWindow(u32),
}

/// The three availability features, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Feature {
    Sr,
    Ur,
    Cut,
}

impl Feature {
    pub const ALL: [Feature; 3] = [Feature::Sr, Feature::Ur, Feature::Cut];

    pub fn value(&self, record: &FeatureRecord) -> f64 {
        match self {
            Feature::Sr => record.sr,
            Feature::Ur => record.ur,
            Feature::Cut => record.cut_min as f64,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Feature::Sr => write!(f, "sr"),
            Feature::Ur => write!(f, "ur"),
            Feature::Cut => write!(f, "cut"),
        }
    }
}

/// "sr+ur+cut"-style name for a feature subset.
pub fn feature_set_name(set: &[Feature]) -> String {
    set.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("+")
}

/// Parses "sr+ur+cut" (also accepts comma separators); result is
/// deduplicated and in canonical order.
pub fn parse_feature_set(s: &str) -> Result<Vec<Feature>, String> {
    let mut set = Vec::new();
    for part in s.split(['+', ',']) {
        let f = match part.trim().to_ascii_lowercase().as_str() {
            "sr" => Feature::Sr,
            "ur" => Feature::Ur,
            "cut" => Feature::Cut,
            other => return Err(format!("unknown feature {other:?}")),
        };
        if !set.contains(&f) {
            set.push(f);
        }
    }
    if set.is_empty() {
        return Err("empty feature set".into());
    }
    set.sort();
    Ok(set)
}

/// All 7 non-empty subsets of {SR, UR, CUT}, canonical order.
pub fn all_feature_sets() -> Vec<Vec<Feature>> {
    vec![
        vec![Feature::Sr],
        vec![Feature::Ur],
        vec![Feature::Cut],
        vec![Feature::Sr, Feature::Ur],
        vec![Feature::Sr, Feature::Cut],
        vec![Feature::Ur, Feature::Cut],
        vec![Feature::Sr, Feature::Ur, Feature::Cut],
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    Boosted,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::LogisticRegression => write!(f, "lr"),
            ModelKind::Boosted => write!(f, "boosted"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_set: Vec<Feature>,
    pub window_min: u32,
    pub horizon_min: u32,
    #[serde(default)]
    pub lr: LrParams,
    #[serde(default)]
    pub boost: BoostParams,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), PredictorError> {
        if self.feature_set.is_empty() {
            return Err(PredictorError::EmptyFeatureSet);
        }
        Ok(())
    }
}

/// Feature rows extracted for one (window, horizon) task.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub pools: Vec<PoolId>,
    /// (pool index, feature vector, label)
    pub rows: Vec<(usize, Vec<f64>, bool)>,
}

/// Builds the design matrix from feature records, keeping only rows that
/// carry a label for the horizon.
pub fn dataset_from_features(
    records: &[FeatureRecord],
    feature_set: &[Feature],
    horizon_min: u32,
) -> Dataset {
    let mut pools: Vec<PoolId> = Vec::new();
    let mut rows = Vec::new();
    for r in records {
        let Some(&label) = r.labels.get(&horizon_min) else {
            continue;
        };
        let pool_index = match pools.iter().position(|p| p == &r.pool) {
            Some(i) => i,
            None => {
                pools.push(r.pool.clone());
                pools.len() - 1
            }
        };
        let x: Vec<f64> = feature_set.iter().map(|f| f.value(r)).collect();
        rows.push((pool_index, x, label));
    }
    Dataset { pools, rows }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    /// All rows of a pool land on the same side; 75/25 by pool count.
    Pool,
    /// Row-level random split, 75/25.
    Row,
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub train_pools: Vec<PoolId>,
    pub test_pools: Vec<PoolId>,
}

fn split_rng(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// 75/25 split of the dataset, deterministic in the seed.
pub fn split_dataset(ds: &Dataset, kind: SplitKind, seed: u64) -> Result<Split, PredictorError> {
    match kind {
        SplitKind::Pool => {
            let n_pools = ds.pools.len();
            if n_pools < 2 {
                return Err(PredictorError::TooFewPools(n_pools));
            }
            let mut order: Vec<usize> = (0..n_pools).collect();
            order.shuffle(&mut split_rng(seed, "pool-split"));
            let n_train = ((n_pools * 3) / 4).clamp(1, n_pools - 1);
            let train_set: Vec<usize> = order[..n_train].to_vec();
            let is_train = |p: usize| train_set.contains(&p);
            let mut split = Split {
                train: Vec::new(),
                test: Vec::new(),
                train_pools: train_set.iter().map(|&i| ds.pools[i].clone()).collect(),
                test_pools: order[n_train..].iter().map(|&i| ds.pools[i].clone()).collect(),
            };
            for (i, (pool_index, _, _)) in ds.rows.iter().enumerate() {
                if is_train(*pool_index) {
                    split.train.push(i);
                } else {
                    split.test.push(i);
                }
            }
            Ok(split)
        }
        SplitKind::Row => {
            let n = ds.rows.len();
            if n < 2 {
                return Err(PredictorError::EmptyTrain);
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut split_rng(seed, "row-split"));
            let n_train = ((n * 3) / 4).clamp(1, n - 1);
            Ok(Split {
                train: order[..n_train].to_vec(),
                test: order[n_train..].to_vec(),
                train_pools: ds.pools.clone(),
                test_pools: ds.pools.clone(),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Lr(LrModel),
    Boosted(BoostedModel),
}

/// A trained classifier plus everything needed to reproduce and apply it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    #[serde(default = "default_v")]
    pub v: u8,
    pub spec: ModelSpec,
    pub seed: u64,
    pub train_pools: Vec<PoolId>,
    pub test_pools: Vec<PoolId>,
    pub model: Model,
}

fn default_v() -> u8 {
    SCHEMA_VERSION
}

impl TrainedModel {
    /// Probability of Available and the class at threshold 0.5.
    pub fn predict(&self, features: &[f64]) -> Result<(f64, bool), PredictorError> {
        if features.len() != self.spec.feature_set.len() {
            return Err(PredictorError::Predict(format!(
                "feature dimension {} does not match spec dimension {}",
                features.len(),
                self.spec.feature_set.len()
            )));
        }
        let p = match &self.model {
            Model::Lr(m) => m.predict_proba(features).map_err(PredictorError::Predict)?,
            Model::Boosted(m) => m.predict_proba(features).map_err(PredictorError::Predict)?,
        };
        Ok((p, p >= 0.5))
    }

    /// Feature vector for this model's feature set from a record, using the
    /// serialized (6-digit) precision so file-trained and in-memory inputs
    /// match exactly.
    pub fn features_of(&self, record: &FeatureRecord) -> Vec<f64> {
        self.spec
            .feature_set
            .iter()
            .map(|f| round6(f.value(record)))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PredictorError> {
        let path = path.as_ref();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent).map_err(|e| PredictorError::Artifact {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
            }
        }
        let json = serde_json::to_string_pretty(self).map_err(|e| PredictorError::Artifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        std::fs::write(path, json + "\n").map_err(|e| PredictorError::Artifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PredictorError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PredictorError::Artifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| PredictorError::Artifact {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

fn check_both_classes(rows: &[(Vec<f64>, bool)]) -> Result<(), PredictorError> {
    let pos = rows.iter().filter(|(_, y)| *y).count();
    if pos == 0 {
        return Err(PredictorError::SingleClass { class: "unavailable" });
    }
    if pos == rows.len() {
        return Err(PredictorError::SingleClass { class: "available" });
    }
    Ok(())
}

/// Trains one model on the train side of the split.
pub fn train(
    ds: &Dataset,
    split: &Split,
    spec: &ModelSpec,
    seed: u64,
) -> Result<TrainedModel, PredictorError> {
    spec.validate()?;
    if split.train.is_empty() {
        return Err(PredictorError::EmptyTrain);
    }
    let train_rows: Vec<(Vec<f64>, bool)> = split
        .train
        .iter()
        .map(|&i| (ds.rows[i].1.clone(), ds.rows[i].2))
        .collect();
    check_both_classes(&train_rows)?;
    let model = match spec.kind {
        ModelKind::LogisticRegression => {
            Model::Lr(LrModel::train(&train_rows, &spec.lr).map_err(PredictorError::Train)?)
        }
        ModelKind::Boosted => Model::Boosted(
            BoostedModel::train(&train_rows, &spec.boost).map_err(PredictorError::Train)?,
        ),
    };
    Ok(TrainedModel {
        v: SCHEMA_VERSION,
        spec: spec.clone(),
        seed,
        train_pools: split.train_pools.clone(),
        test_pools: split.test_pools.clone(),
        model,
    })
}

/// One row of the evaluation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixCell {
    pub kind: ModelKind,
    pub feature_set: Vec<Feature>,
    pub window_min: u32,
    pub horizon_min: u32,
    pub f1_macro_train: f64,
    pub f1_macro_test: f64,
    pub f1_available: f64,
    pub f1_unavailable: f64,
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub kinds: Vec<ModelKind>,
    pub feature_sets: Vec<Vec<Feature>>,
    pub windows_min: Vec<u32>,
    pub horizons_min: Vec<u32>,
    pub split: SplitKind,
    pub seed: u64,
    pub lr: LrParams,
    pub boost: BoostParams,
}

#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub cells: Vec<MatrixCell>,
    /// (kind, feature_set, window, horizon, reason) for skipped cells.
    pub skipped: Vec<(ModelKind, Vec<Feature>, u32, u32, String)>,
}

fn evaluate_cell(
    records: &[FeatureRecord],
    kind: ModelKind,
    feature_set: &[Feature],
    window_min: u32,
    horizon_min: u32,
    cfg: &EvalConfig,
) -> Result<MatrixCell, PredictorError> {
    let ds = dataset_from_features(records, feature_set, horizon_min);
    if ds.rows.is_empty() {
        return Err(PredictorError::NoLabeledRows {
            horizon_min,
            window_min,
        });
    }
    let split = split_dataset(&ds, cfg.split, cfg.seed)?;
    let spec = ModelSpec {
        kind,
        feature_set: feature_set.to_vec(),
        window_min,
        horizon_min,
        lr: cfg.lr,
        boost: cfg.boost,
    };
    let model = train(&ds, &split, &spec, cfg.seed)?;

    let eval = |indices: &[usize]| -> Result<F1Report, PredictorError> {
        let mut preds = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let (_, class) = model.predict(&ds.rows[i].1)?;
            preds.push(class);
            labels.push(ds.rows[i].2);
        }
        Ok(f1_macro(&preds, &labels)?)
    };
    let train_report = eval(&split.train)?;
    let test_report = eval(&split.test)?;
    Ok(MatrixCell {
        kind,
        feature_set: feature_set.to_vec(),
        window_min,
        horizon_min,
        f1_macro_train: train_report.macro_f1,
        f1_macro_test: test_report.macro_f1,
        f1_available: test_report.f1_available,
        f1_unavailable: test_report.f1_unavailable,
    })
}

/// Runs the full (model, feature set, window, horizon) matrix. Cells whose
/// horizon has no labels in the given window's records are skipped with a
/// reason; genuine training failures abort.
pub fn evaluate_matrix(
    features_by_window: &BTreeMap<u32, Vec<FeatureRecord>>,
    cfg: &EvalConfig,
) -> Result<EvalOutput, PredictorError> {
    for set in &cfg.feature_sets {
        if set.is_empty() {
            return Err(PredictorError::EmptyFeatureSet);
        }
    }
    let mut jobs = Vec::new();
    for &kind in &cfg.kinds {
        for set in &cfg.feature_sets {
            for &window in &cfg.windows_min {
                if !features_by_window.contains_key(&window) {
                    return Err(PredictorError::MissingWindow(window));
                }
                for &horizon in &cfg.horizons_min {
                    jobs.push((kind, set.clone(), window, horizon));
                }
            }
        }
    }
    let results: Vec<Result<MatrixCell, (ModelKind, Vec<Feature>, u32, u32, PredictorError)>> =
        jobs.par_iter()
            .map(|(kind, set, window, horizon)| {
                let records = &features_by_window[window];
                evaluate_cell(records, *kind, set, *window, *horizon, cfg)
                    .map_err(|e| (*kind, set.clone(), *window, *horizon, e))
            })
            .collect();

    let mut out = EvalOutput {
        cells: Vec::new(),
        skipped: Vec::new(),
    };
    for r in results {
        match r {
            Ok(cell) => out.cells.push(cell),
            Err((kind, set, window, horizon, PredictorError::NoLabeledRows { .. })) => {
                out.skipped.push((
                    kind,
                    set,
                    window,
                    horizon,
                    "no labels for horizon".to_string(),
                ));
            }
            Err((_, _, _, _, e)) => return Err(e),
        }
    }
    Ok(out)
}

/// Best window per (model, feature set, horizon) by test F1; ties go to the
/// smaller window.
pub fn best_windows(cells: &[MatrixCell]) -> Vec<(ModelKind, Vec<Feature>, u32, u32, f64)> {
    let mut best: BTreeMap<(String, u32), (ModelKind, Vec<Feature>, u32, u32, f64)> =
        BTreeMap::new();
    for c in cells {
        let key = (format!("{}|{}", c.kind, feature_set_name(&c.feature_set)), c.horizon_min);
        match best.get(&key) {
            Some((_, _, _, w, f1))
                if *f1 > c.f1_macro_test
                    || (*f1 == c.f1_macro_test && *w <= c.window_min) => {}
            _ => {
                best.insert(
                    key,
                    (
                        c.kind,
                        c.feature_set.clone(),
                        c.horizon_min,
                        c.window_min,
                        c.f1_macro_test,
                    ),
                );
            }
        }
    }
    best.into_values().collect()
}

/// Writes the matrix as CSV in deterministic row order.
pub fn write_matrix_csv(cells: &[MatrixCell], path: impl AsRef<Path>) -> Result<(), PredictorError> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| PredictorError::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let write_err = |e: csv::Error| PredictorError::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    w.write_record([
        "model",
        "features",
        "window_min",
        "horizon_min",
        "f1_macro_train",
        "f1_macro_test",
        "f1_available",
        "f1_unavailable",
    ])
    .map_err(write_err)?;
    for c in cells {
        w.write_record([
            c.kind.to_string(),
            feature_set_name(&c.feature_set),
            c.window_min.to_string(),
            c.horizon_min.to_string(),
            format!("{:.6}", c.f1_macro_train),
            format!("{:.6}", c.f1_macro_test),
            format!("{:.6}", c.f1_available),
            format!("{:.6}", c.f1_unavailable),
        ])
        .map_err(write_err)?;
    }
    w.flush().map_err(|e| PredictorError::Artifact {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pool(i: usize) -> PoolId {
        PoolId::new(format!("t{i}.large"), "us-east-1", "us-east-1a")
    }

    /// Synthetic feature records for `n_pools` pools x `n_cycles` cycles
    /// where availability degrades when SR drops.
    fn synth_records(n_pools: usize, n_cycles: u32, horizons: &[u32]) -> Vec<FeatureRecord> {
        let mut out = Vec::new();
        for p in 0..n_pools {
            for cycle in 1..=n_cycles {
                let bad = (cycle / 10 + p as u32) % 3 == 0;
                let sr = if bad { 0.2 } else { 1.0 };
                let mut labels = BTreeMap::new();
                for &h in horizons {
                    let k = h / 3;
                    if cycle + k <= n_cycles {
                        let future_bad = ((cycle + k) / 10 + p as u32) % 3 == 0;
                        labels.insert(h, !future_bad);
                    }
                }
                out.push(FeatureRecord {
                    v: 1,
                    cycle,
                    pool: pool(p),
                    window_min: 60,
                    interval_min: 3,
                    sr,
                    ur: if bad { 0.6 } else { 0.05 },
                    cut_min: if bad { 9 } else { 0 },
                    labels,
                });
            }
        }
        out
    }

    #[test]
    fn pool_split_keeps_pools_on_one_side() {
        let records = synth_records(8, 60, &[0]);
        let ds = dataset_from_features(&records, &[Feature::Sr], 0);
        let split = split_dataset(&ds, SplitKind::Pool, 7).unwrap();
        assert_eq!(split.train_pools.len(), 6);
        assert_eq!(split.test_pools.len(), 2);
        for &i in &split.train {
            let p = &ds.pools[ds.rows[i].0];
            assert!(split.train_pools.contains(p));
            assert!(!split.test_pools.contains(p));
        }
        for &i in &split.test {
            let p = &ds.pools[ds.rows[i].0];
            assert!(split.test_pools.contains(p));
        }
    }

    #[test]
    fn row_split_is_75_25() {
        let records = synth_records(4, 100, &[0]);
        let ds = dataset_from_features(&records, &[Feature::Sr], 0);
        let split = split_dataset(&ds, SplitKind::Row, 7).unwrap();
        assert_eq!(split.train.len(), 300);
        assert_eq!(split.test.len(), 100);
    }

    #[test]
    fn batch_predictions_are_order_independent() {
        let records = synth_records(4, 60, &[0]);
        let ds = dataset_from_features(&records, &Feature::ALL, 0);
        let split = split_dataset(&ds, SplitKind::Row, 7).unwrap();
        let spec = ModelSpec {
            kind: ModelKind::Boosted,
            feature_set: Feature::ALL.to_vec(),
            window_min: 60,
            horizon_min: 0,
            lr: LrParams::default(),
            boost: BoostParams { rounds: 20, max_depth: 2, shrinkage: 0.2 },
        };
        let model = train(&ds, &split, &spec, 7).unwrap();
        let forward: Vec<bool> = split
            .test
            .iter()
            .map(|&i| model.predict(&ds.rows[i].1).unwrap().1)
            .collect();
        let mut rev_idx = split.test.clone();
        rev_idx.reverse();
        let mut backward: Vec<bool> = rev_idx
            .iter()
            .map(|&i| model.predict(&ds.rows[i].1).unwrap().1)
            .collect();
        backward.reverse();
        assert_eq!(forward, backward);
    }

    #[test]
    fn twenty_horizon_columns_per_configuration() {
        let horizons: Vec<u32> = (1..=20).map(|k| k * 3).collect();
        let records = synth_records(4, 200, &horizons);
        let mut by_window = BTreeMap::new();
        by_window.insert(60u32, records);
        let cfg = EvalConfig {
            kinds: vec![ModelKind::LogisticRegression],
            feature_sets: vec![vec![Feature::Sr]],
            windows_min: vec![60],
            horizons_min: horizons.clone(),
            split: SplitKind::Row,
            seed: 7,
            lr: LrParams { learning_rate: 0.1, epochs: 50, l2: 1e-4 },
            boost: BoostParams::default(),
        };
        let out = evaluate_matrix(&by_window, &cfg).unwrap();
        assert_eq!(out.cells.len(), 20);
        assert!(out.skipped.is_empty());
    }

    #[test]
    fn matrix_is_deterministic() {
        let records = synth_records(4, 80, &[0, 3]);
        let mut by_window = BTreeMap::new();
        by_window.insert(60u32, records);
        let cfg = EvalConfig {
            kinds: vec![ModelKind::LogisticRegression, ModelKind::Boosted],
            feature_sets: vec![vec![Feature::Sr], Feature::ALL.to_vec()],
            windows_min: vec![60],
            horizons_min: vec![0, 3],
            split: SplitKind::Pool,
            seed: 9,
            lr: LrParams { learning_rate: 0.1, epochs: 50, l2: 1e-4 },
            boost: BoostParams { rounds: 10, max_depth: 2, shrinkage: 0.2 },
        };
        let a = evaluate_matrix(&by_window, &cfg).unwrap();
        let b = evaluate_matrix(&by_window, &cfg).unwrap();
        assert_eq!(a.cells, b.cells);
    }

    #[test]
    fn unlabeled_horizon_rows_are_skipped_with_warning() {
        let records = synth_records(4, 80, &[0]);
        let mut by_window = BTreeMap::new();
        by_window.insert(60u32, records);
        let cfg = EvalConfig {
            kinds: vec![ModelKind::LogisticRegression],
            feature_sets: vec![vec![Feature::Sr]],
            windows_min: vec![60],
            horizons_min: vec![0, 33], // 33 was never labeled
            split: SplitKind::Row,
            seed: 9,
            lr: LrParams { learning_rate: 0.1, epochs: 20, l2: 1e-4 },
            boost: BoostParams::default(),
        };
        let out = evaluate_matrix(&by_window, &cfg).unwrap();
        assert_eq!(out.cells.len(), 1);
        assert_eq!(out.skipped.len(), 1);
        assert_eq!(out.skipped[0].3, 33);
    }

    #[test]
    fn single_class_is_refused() {
        let mut records = synth_records(2, 40, &[0]);
        for r in &mut records {
            r.labels.insert(0, true);
        }
        let ds = dataset_from_features(&records, &[Feature::Sr], 0);
        let split = split_dataset(&ds, SplitKind::Row, 7).unwrap();
        let spec = ModelSpec {
            kind: ModelKind::LogisticRegression,
            feature_set: vec![Feature::Sr],
            window_min: 60,
            horizon_min: 0,
            lr: LrParams::default(),
            boost: BoostParams::default(),
        };
        let err = train(&ds, &split, &spec, 7).unwrap_err();
        assert!(matches!(err, PredictorError::SingleClass { .. }));
    }

    #[test]
    fn model_artifact_round_trips() {
        let records = synth_records(4, 60, &[0]);
        let ds = dataset_from_features(&records, &Feature::ALL, 0);
        let split = split_dataset(&ds, SplitKind::Pool, 7).unwrap();
        let spec = ModelSpec {
            kind: ModelKind::Boosted,
            feature_set: Feature::ALL.to_vec(),
            window_min: 60,
            horizon_min: 0,
            lr: LrParams::default(),
            boost: BoostParams { rounds: 5, max_depth: 2, shrinkage: 0.3 },
        };
        let model = train(&ds, &split, &spec, 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn feature_set_parsing_and_naming() {
        assert_eq!(parse_feature_set("sr+ur+cut").unwrap(), Feature::ALL.to_vec());
        assert_eq!(parse_feature_set("cut,sr").unwrap(), vec![Feature::Sr, Feature::Cut]);
        assert!(parse_feature_set("sr+bogus").is_err());
        assert_eq!(feature_set_name(&Feature::ALL), "sr+ur+cut");
        assert_eq!(all_feature_sets().len(), 7);
    }
}
