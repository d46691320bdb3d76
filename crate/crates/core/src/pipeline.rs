//! End-to-end pipeline: simulate -> features -> train -> evaluate ->
//! replay -> analyze, driven by one TOML config, writing a reproducible
//! artifact directory with a manifest (config hash, seed, file digests).
//!
//! Reruns with the same config are byte-identical. A stage failure halts
//! the pipeline with the stage name, leaves partial outputs in place, and
//! drops a marker file under `failed/`.

use crate::analysis::{
    self, co_interrupt_cdf, compare, cost_model, feature_fidelity, CompareReport, CostParams,
    CostReport, FidelityReport, ProximityCdf,
};
use crate::features::{featurize, recast_running_as_cycles, FeaturizeOptions};
use crate::predictor::{
    self, dataset_from_features, evaluate_matrix, feature_set_name, parse_feature_set,
    split_dataset, BoostParams, EvalConfig, Feature, LrParams, MatrixCell, ModelKind, ModelSpec,
    SplitKind, TrainedModel,
};
use crate::replay::{
    gen_workload, load_workload_csv, run_experiment, write_results_csv, write_summary_csv,
    ExperimentConfig, Query, Strategy, SummaryRow,
};
use crate::sim::{default_scenario, run_scenario_records, write_bundle, PoolConfig, ScenarioSpec};
use crate::trace::{self, FeatureRecord, SCHEMA_VERSION};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Simulate,
    Features,
    Train,
    Evaluate,
    Replay,
    Analyze,
    Manifest,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Simulate => "simulate",
            Stage::Features => "features",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Replay => "replay",
            Stage::Analyze => "analyze",
            Stage::Manifest => "manifest",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("config file {path}: {message}")]
    ConfigFile { path: String, message: String },
}

fn schema_v() -> u8 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    /// Number of built-in default pools; ignored when `pool` is non-empty.
    #[serde(default)]
    pub default_pools: usize,
    #[serde(default, rename = "pool")]
    pub pools: Vec<PoolConfig>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            default_pools: 20,
            pools: Vec::new(),
        }
    }
}

impl ScenarioSection {
    pub fn materialize(&self) -> Vec<PoolConfig> {
        if self.pools.is_empty() {
            default_scenario(self.default_pools)
        } else {
            self.pools.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectionSection {
    pub interval_min: u32,
    pub requests_per_cycle: u32,
    pub duration_min: u32,
    pub rate_limit_max: u32,
    pub rate_limit_window_s: u32,
}

impl Default for CollectionSection {
    fn default() -> Self {
        Self {
            interval_min: 3,
            requests_per_cycle: 10,
            duration_min: 1440,
            rate_limit_max: 1000,
            rate_limit_window_s: 180,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    pub windows_min: Vec<u32>,
    pub horizons_min: Vec<u32>,
    /// Window used for the probe-vs-actual feature fidelity analysis;
    /// must be one of `windows_min`.
    pub fidelity_window_min: u32,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        Self {
            windows_min: vec![60, 240, 720],
            horizons_min: vec![0, 3, 15, 30, 60],
            fidelity_window_min: 240,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSection {
    pub split: SplitKind,
    pub models: Vec<ModelKind>,
    /// Feature subsets like "sr" or "sr+ur+cut"; "all" expands to all 7.
    pub feature_sets: Vec<String>,
    pub eval_windows_min: Vec<u32>,
    pub eval_horizons_min: Vec<u32>,
    #[serde(default)]
    pub lr: LrParams,
    #[serde(default)]
    pub boosted: BoostParams,
}

impl Default for PredictorSection {
    fn default() -> Self {
        Self {
            split: SplitKind::Pool,
            models: vec![ModelKind::LogisticRegression, ModelKind::Boosted],
            feature_sets: vec!["sr".into(), "sr+ur+cut".into()],
            eval_windows_min: vec![240],
            eval_horizons_min: vec![3, 15, 30, 60],
            lr: LrParams::default(),
            boosted: BoostParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub query_count: u32,
    pub workload_total_min: f64,
    pub query_min_s: f64,
    pub query_max_s: f64,
    /// Optional CSV of (id, duration_s) overriding the generated workload.
    #[serde(default)]
    pub queries_csv: Option<String>,
    pub strategies: Vec<String>,
    pub horizons_min: Vec<u32>,
    pub permutations: u32,
    /// Feature window and model family used by the Predict strategy.
    pub window_min: u32,
    pub model: ModelKind,
    pub feature_set: String,
}

impl Default for ReplaySection {
    fn default() -> Self {
        Self {
            query_count: 99,
            workload_total_min: 206.0,
            query_min_s: 0.5,
            query_max_s: 661.5,
            queries_csv: None,
            strategies: vec!["always_run".into(), "sjf".into(), "predict".into()],
            horizons_min: vec![3, 15],
            permutations: 5,
            window_min: 240,
            model: ModelKind::Boosted,
            feature_set: "sr+ur+cut".into(),
        }
    }
}

/// The whole pipeline configuration. Every field has a default, so a
/// minimal TOML file only overrides what it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "schema_v")]
    pub v: u8,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub collection: CollectionSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub predictor: PredictorSection,
    #[serde(default)]
    pub replay: ReplaySection,
    #[serde(default)]
    pub cost: CostParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            v: SCHEMA_VERSION,
            seed: 7,
            scenario: ScenarioSection::default(),
            collection: CollectionSection::default(),
            features: FeaturesSection::default(),
            predictor: PredictorSection::default(),
            replay: ReplaySection::default(),
            cost: CostParams::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::ConfigFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| PipelineError::ConfigFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// SHA-256 over the canonical JSON serialization: changes iff a
    /// semantic field changes (comments, key order, or the config file
    /// path never matter).
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex_digest(json.as_bytes())
    }

    /// Cross-stage consistency checks; returns every violation found.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut errors = Vec::new();
        let dt = self.collection.interval_min;
        if dt == 0 {
            errors.push("collection.interval_min must be positive".into());
        }
        if dt > 0 && self.collection.duration_min % dt != 0 {
            errors.push(format!(
                "collection.duration_min {} not divisible by interval {}",
                self.collection.duration_min, dt
            ));
        }
        if self.collection.requests_per_cycle == 0 {
            errors.push("collection.requests_per_cycle must be >= 1".into());
        }
        let pools = self.scenario.materialize();
        if pools.is_empty() {
            errors.push("scenario has no pools".into());
        }
        for cfg in &pools {
            if let Err(e) = cfg.validate() {
                errors.push(e.to_string());
            }
        }
        if dt > 0 {
            for &w in &self.features.windows_min {
                if w == 0 || w % dt != 0 {
                    errors.push(format!("features window {w} min not divisible by interval {dt}"));
                }
            }
            for &h in &self.features.horizons_min {
                if h % dt != 0 {
                    errors.push(format!("features horizon {h} min not divisible by interval {dt}"));
                }
            }
        }
        if !self
            .features
            .windows_min
            .contains(&self.features.fidelity_window_min)
        {
            errors.push(format!(
                "fidelity_window_min {} is not in features.windows_min",
                self.features.fidelity_window_min
            ));
        }
        for &w in &self.predictor.eval_windows_min {
            if !self.features.windows_min.contains(&w) {
                errors.push(format!("predictor eval window {w} is not in features.windows_min"));
            }
        }
        for &h in &self.predictor.eval_horizons_min {
            if !self.features.horizons_min.contains(&h) {
                errors.push(format!("predictor eval horizon {h} is not in features.horizons_min"));
            }
        }
        for set in &self.predictor.feature_sets {
            if set != "all" {
                if let Err(e) = parse_feature_set(set) {
                    errors.push(format!("predictor feature set {set:?}: {e}"));
                }
            }
        }
        if self.predictor.models.is_empty() {
            errors.push("predictor.models is empty".into());
        }
        if !self.features.windows_min.contains(&self.replay.window_min) {
            errors.push(format!(
                "replay window {} is not in features.windows_min",
                self.replay.window_min
            ));
        }
        for &h in &self.replay.horizons_min {
            if !self.features.horizons_min.contains(&h) {
                errors.push(format!("replay horizon {h} is not in features.horizons_min"));
            }
        }
        for s in &self.replay.strategies {
            if let Err(e) = Strategy::parse(s) {
                errors.push(format!("replay strategy: {e}"));
            }
        }
        if self.replay.permutations == 0 {
            errors.push("replay.permutations must be >= 1".into());
        }
        if let Err(e) = parse_feature_set(&self.replay.feature_set) {
            errors.push(format!("replay feature set: {e}"));
        }
        if self.replay.queries_csv.is_none() {
            if self.replay.query_count == 0 {
                errors.push("replay.query_count must be >= 1".into());
            }
            if !(self.replay.query_min_s > 0.0 && self.replay.query_min_s < self.replay.query_max_s)
            {
                errors.push("replay query duration bounds must satisfy 0 < min < max".into());
            }
        }
        if let Err(e) = crate::collector::check_feasible(
            pools.len(),
            self.collection.requests_per_cycle,
            &crate::collector::RateLimit {
                max_requests_per_window: self.collection.rate_limit_max,
                window_seconds: self.collection.rate_limit_window_s,
            },
            dt.max(1),
        ) {
            errors.push(e.to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Validation(errors))
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub v: u8,
    pub seed: u64,
    pub config_sha256: String,
    pub artifacts: Vec<ArtifactEntry>,
}

/// Everything the pipeline produced, for callers that want to inspect
/// results without re-reading the artifact files.
#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub manifest: Manifest,
    pub compare: CompareReport,
    pub proximity: ProximityCdf,
    pub cost: CostReport,
    pub eval_cells: Vec<MatrixCell>,
    pub eval_skipped: Vec<String>,
    pub replay_summaries: Vec<SummaryRow>,
    pub fidelity: FidelityReport,
    pub interruption_count: usize,
    pub eval_pools: Vec<crate::pool::PoolId>,
}

fn stage_err<E: fmt::Display>(stage: Stage) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

fn mark_failed(out_dir: &Path, stage: Stage, message: &str) {
    let dir = out_dir.join("failed");
    if std::fs::create_dir_all(&dir).is_ok() {
        let _ = std::fs::write(dir.join(format!("{stage}.txt")), format!("{message}\n"));
    }
}

fn expand_feature_sets(sets: &[String]) -> Vec<Vec<Feature>> {
    let mut out = Vec::new();
    for s in sets {
        if s == "all" {
            for fs in predictor::all_feature_sets() {
                if !out.contains(&fs) {
                    out.push(fs);
                }
            }
        } else {
            let fs = parse_feature_set(s).expect("validated");
            if !out.contains(&fs) {
                out.push(fs);
            }
        }
    }
    out
}

/// Runs every stage into `out_dir`. Rerunning with the same config and any
/// output directory produces byte-identical artifacts and manifest.
pub fn run_pipeline(cfg: &RunConfig, out_dir: &Path) -> Result<PipelineReport, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(stage_err(Stage::Simulate))?;
    // A rerun into the same directory must not inherit a stale marker.
    let _ = std::fs::remove_dir_all(out_dir.join("failed"));

    let run = |stage: Stage, f: &mut dyn FnMut() -> Result<(), PipelineError>| {
        f().inspect_err(|e| mark_failed(out_dir, stage, &e.to_string()))
    };

    let pools = cfg.scenario.materialize();
    let dt = cfg.collection.interval_min;

    // -- simulate ---------------------------------------------------------
    let mut records = None;
    run(Stage::Simulate, &mut || {
        let recs = run_scenario_records(
            &pools,
            cfg.collection.duration_min,
            dt,
            cfg.collection.requests_per_cycle,
            cfg.seed,
        )
        .map_err(stage_err(Stage::Simulate))?;
        write_bundle(&recs, out_dir.join("bundle")).map_err(stage_err(Stage::Simulate))?;
        ScenarioSpec::new(pools.clone())
            .save(out_dir.join("scenario.toml"))
            .map_err(stage_err(Stage::Simulate))?;
        records = Some(recs);
        Ok(())
    })?;
    let records = records.unwrap();

    // -- features ---------------------------------------------------------
    let mut features_by_window: BTreeMap<u32, Vec<FeatureRecord>> = BTreeMap::new();
    let mut actual_features: Vec<FeatureRecord> = Vec::new();
    run(Stage::Features, &mut || {
        let dir = out_dir.join("features");
        std::fs::create_dir_all(&dir).map_err(stage_err(Stage::Features))?;
        for &w in &cfg.features.windows_min {
            let recs = featurize(
                &records.cycles,
                &records.running,
                &FeaturizeOptions {
                    window_min: w,
                    horizons_min: cfg.features.horizons_min.clone(),
                    n_target: None,
                },
            )
            .map_err(stage_err(Stage::Features))?;
            trace::write_trace(&recs, dir.join(format!("features_w{w:03}.jsonl")))
                .map_err(stage_err(Stage::Features))?;
            features_by_window.insert(w, recs);
        }
        // Actual-side features for fidelity: same engine over the running
        // trace recast as measurements.
        let recast = recast_running_as_cycles(&records.running, dt, None)
            .map_err(stage_err(Stage::Features))?;
        let fid_w = cfg.features.fidelity_window_min;
        actual_features = featurize(
            &recast,
            &records.running,
            &FeaturizeOptions {
                window_min: fid_w,
                horizons_min: vec![],
                n_target: None,
            },
        )
        .map_err(stage_err(Stage::Features))?;
        trace::write_trace(&actual_features, dir.join(format!("actual_w{fid_w:03}.jsonl")))
            .map_err(stage_err(Stage::Features))?;
        Ok(())
    })?;

    // -- train ------------------------------------------------------------
    let mut replay_models: Vec<TrainedModel> = Vec::new();
    run(Stage::Train, &mut || {
        let dir = out_dir.join("models");
        std::fs::create_dir_all(&dir).map_err(stage_err(Stage::Train))?;
        let feature_set = parse_feature_set(&cfg.replay.feature_set).expect("validated");
        let window_records = &features_by_window[&cfg.replay.window_min];
        for &h in &cfg.replay.horizons_min {
            let ds = dataset_from_features(window_records, &feature_set, h);
            let split = split_dataset(&ds, cfg.predictor.split, cfg.seed)
                .map_err(stage_err(Stage::Train))?;
            let spec = ModelSpec {
                kind: cfg.replay.model,
                feature_set: feature_set.clone(),
                window_min: cfg.replay.window_min,
                horizon_min: h,
                lr: cfg.predictor.lr,
                boost: cfg.predictor.boosted,
            };
            let model =
                predictor::train(&ds, &split, &spec, cfg.seed).map_err(stage_err(Stage::Train))?;
            model
                .save(dir.join(format!(
                    "{}_{}_w{:03}_h{h:03}.json",
                    cfg.replay.model,
                    feature_set_name(&feature_set),
                    cfg.replay.window_min
                )))
                .map_err(stage_err(Stage::Train))?;
            replay_models.push(model);
        }
        Ok(())
    })?;

    // -- evaluate ---------------------------------------------------------
    let mut eval_cells: Vec<MatrixCell> = Vec::new();
    let mut eval_skipped: Vec<String> = Vec::new();
    run(Stage::Evaluate, &mut || {
        let dir = out_dir.join("eval");
        std::fs::create_dir_all(&dir).map_err(stage_err(Stage::Evaluate))?;
        let eval_cfg = EvalConfig {
            kinds: cfg.predictor.models.clone(),
            feature_sets: expand_feature_sets(&cfg.predictor.feature_sets),
            windows_min: cfg.predictor.eval_windows_min.clone(),
            horizons_min: cfg.predictor.eval_horizons_min.clone(),
            split: cfg.predictor.split,
            seed: cfg.seed,
            lr: cfg.predictor.lr,
            boost: cfg.predictor.boosted,
        };
        let out = evaluate_matrix(&features_by_window, &eval_cfg)
            .map_err(stage_err(Stage::Evaluate))?;
        predictor::write_matrix_csv(&out.cells, dir.join("matrix.csv"))
            .map_err(stage_err(Stage::Evaluate))?;
        let best = predictor::best_windows(&out.cells);
        write_best_windows_csv(&best, &dir.join("best_window.csv"))
            .map_err(stage_err(Stage::Evaluate))?;
        eval_skipped = out
            .skipped
            .iter()
            .map(|(k, fs, w, h, why)| {
                format!("{k} {} w={w} h={h}: {why}", feature_set_name(fs))
            })
            .collect();
        eval_cells = out.cells;
        Ok(())
    })?;

    // -- replay -----------------------------------------------------------
    let mut replay_summaries: Vec<SummaryRow> = Vec::new();
    let mut eval_pools: Vec<crate::pool::PoolId> = Vec::new();
    run(Stage::Replay, &mut || {
        let dir = out_dir.join("replay");
        std::fs::create_dir_all(&dir).map_err(stage_err(Stage::Replay))?;
        let queries: Vec<Query> = match &cfg.replay.queries_csv {
            Some(path) => load_workload_csv(path).map_err(stage_err(Stage::Replay))?,
            None => gen_workload(
                cfg.replay.query_count,
                cfg.replay.workload_total_min,
                cfg.replay.query_min_s,
                cfg.replay.query_max_s,
                cfg.seed,
            )
            .map_err(stage_err(Stage::Replay))?,
        };
        write_workload_csv(&queries, &dir.join("workload.csv"))
            .map_err(stage_err(Stage::Replay))?;
        // Evaluation pools: the test side of the pool split (so the model
        // never saw their traces); under a row split, every pool.
        eval_pools = match (cfg.predictor.split, replay_models.first()) {
            (SplitKind::Pool, Some(m)) => m.test_pools.clone(),
            _ => pools.iter().map(|c| c.pool.clone()).collect(),
        };
        let strategies: Vec<Strategy> = cfg
            .replay
            .strategies
            .iter()
            .map(|s| Strategy::parse(s).expect("validated"))
            .collect();
        let out = run_experiment(
            &records.cycles,
            &records.running,
            &eval_pools,
            &queries,
            &replay_models,
            &ExperimentConfig {
                strategies,
                horizons_min: cfg.replay.horizons_min.clone(),
                permutations: cfg.replay.permutations,
                seed: cfg.seed,
                n_target: None,
            },
        )
        .map_err(stage_err(Stage::Replay))?;
        write_results_csv(&out.rows, dir.join("results.csv")).map_err(stage_err(Stage::Replay))?;
        write_summary_csv(&out.summaries, dir.join("summary.csv"))
            .map_err(stage_err(Stage::Replay))?;
        replay_summaries = out.summaries;
        Ok(())
    })?;

    // -- analyze ----------------------------------------------------------
    let mut compare_report = None;
    let mut proximity = None;
    let mut cost_report = None;
    let mut fidelity_report = None;
    run(Stage::Analyze, &mut || {
        let dir = out_dir.join("analysis");
        std::fs::create_dir_all(&dir).map_err(stage_err(Stage::Analyze))?;
        let cmp = compare(&records.cycles, &records.running).map_err(stage_err(Stage::Analyze))?;
        write_compare_csv(&cmp, &dir.join("compare.csv")).map_err(stage_err(Stage::Analyze))?;

        let cdf = co_interrupt_cdf(&records.interruptions).map_err(stage_err(Stage::Analyze))?;
        analysis::write_cdf_csv(&cdf, dir.join("proximity_cdf.csv"))
            .map_err(stage_err(Stage::Analyze))?;
        write_proximity_summary_csv(&cdf, &dir.join("proximity_summary.csv"))
            .map_err(stage_err(Stage::Analyze))?;

        let fid = feature_fidelity(
            &features_by_window[&cfg.features.fidelity_window_min],
            &actual_features,
        )
        .map_err(stage_err(Stage::Analyze))?;
        write_fidelity_csv(&fid, &dir.join("fidelity.csv"), &dir.join("fidelity_exclusions.csv"))
            .map_err(stage_err(Stage::Analyze))?;

        let cost = cost_model(&cfg.cost).map_err(stage_err(Stage::Analyze))?;
        write_cost_csv(&cost, &dir.join("cost.csv")).map_err(stage_err(Stage::Analyze))?;

        compare_report = Some(cmp);
        proximity = Some(cdf);
        cost_report = Some(cost);
        fidelity_report = Some(fid);
        Ok(())
    })?;

    // -- manifest ---------------------------------------------------------
    let mut manifest = Manifest {
        v: SCHEMA_VERSION,
        seed: cfg.seed,
        config_sha256: cfg.hash(),
        artifacts: Vec::new(),
    };
    run(Stage::Manifest, &mut || {
        let mut paths = Vec::new();
        collect_files(out_dir, out_dir, &mut paths).map_err(stage_err(Stage::Manifest))?;
        paths.sort();
        for rel in paths {
            if rel == "manifest.json" || rel.starts_with("failed/") {
                continue;
            }
            let bytes =
                std::fs::read(out_dir.join(&rel)).map_err(stage_err(Stage::Manifest))?;
            manifest.artifacts.push(ArtifactEntry {
                sha256: hex_digest(&bytes),
                bytes: bytes.len() as u64,
                path: rel,
            });
        }
        let json =
            serde_json::to_string_pretty(&manifest).map_err(stage_err(Stage::Manifest))?;
        std::fs::write(out_dir.join("manifest.json"), json + "\n")
            .map_err(stage_err(Stage::Manifest))?;
        Ok(())
    })?;

    Ok(PipelineReport {
        manifest,
        compare: compare_report.unwrap(),
        proximity: proximity.unwrap(),
        cost: cost_report.unwrap(),
        eval_cells,
        eval_skipped,
        replay_summaries,
        fidelity: fidelity_report.unwrap(),
        interruption_count: records.interruptions.len(),
        eval_pools,
    })
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("under root")
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

type CsvResult = Result<(), PipelineError>;

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, PipelineError> {
    csv::Writer::from_path(path).map_err(|e| PipelineError::Stage {
        stage: Stage::Analyze,
        message: format!("{}: {e}", path.display()),
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> PipelineError + '_ {
    move |e| PipelineError::Stage {
        stage: Stage::Analyze,
        message: format!("{}: {e}", path.display()),
    }
}

fn write_compare_csv(report: &CompareReport, path: &Path) -> CsvResult {
    let mut w = csv_writer(path)?;
    w.write_record([
        "actual_gt",
        "equal",
        "actual_lt",
        "total",
        "pct_actual_gt",
        "pct_equal",
        "pct_actual_lt",
    ])
    .map_err(csv_err(path))?;
    w.write_record([
        report.actual_gt.to_string(),
        report.equal.to_string(),
        report.actual_lt.to_string(),
        report.total.to_string(),
        format!("{:.2}", report.pct_actual_gt),
        format!("{:.2}", report.pct_equal),
        format!("{:.2}", report.pct_actual_lt),
    ])
    .map_err(csv_err(path))?;
    w.flush().map_err(|e| PipelineError::Stage {
        stage: Stage::Analyze,
        message: e.to_string(),
    })
}

fn write_proximity_summary_csv(cdf: &ProximityCdf, path: &Path) -> CsvResult {
    let mut w = csv_writer(path)?;
    w.write_record(["included_events", "excluded_events", "cdf_60s", "cdf_180s"])
        .map_err(csv_err(path))?;
    w.write_record([
        cdf.included.to_string(),
        cdf.excluded.to_string(),
        format!("{:.6}", cdf.value_at(60)),
        format!("{:.6}", cdf.value_at(180)),
    ])
    .map_err(csv_err(path))?;
    w.flush().map_err(|e| PipelineError::Stage {
        stage: Stage::Analyze,
        message: e.to_string(),
    })
}

fn write_fidelity_csv(report: &FidelityReport, path: &Path, exclusions: &Path) -> CsvResult {
    let mut w = csv_writer(path)?;
    w.write_record(["pool", "feature", "pearson_r"]).map_err(csv_err(path))?;
    for row in &report.rows {
        w.write_record([row.pool.to_string(), row.feature.to_string(), format!("{:.6}", row.r)])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| PipelineError::Stage {
        stage: Stage::Analyze,
        message: e.to_string(),
    })?;
    let mut w = csv_writer(exclusions)?;
    w.write_record(["pool", "feature", "reason"]).map_err(csv_err(exclusions))?;
    for (pool, feature) in &report.excluded {
        w.write_record([
            pool.to_string(),
            feature.to_string(),
            "zero variance in one or both series".to_string(),
        ])
        .map_err(csv_err(exclusions))?;
    }
    w.flush().map_err(|e| PipelineError::Stage {
        stage: Stage::Analyze,
        message: e.to_string(),
    })
}

fn write_cost_csv(report: &CostReport, path: &Path) -> CsvResult {
    let mut w = csv_writer(path)?;
    w.write_record([
        "continuous",
        "periodic_probe",
        "ddd",
        "continuous_over_ddd",
        "periodic_over_ddd",
    ])
    .map_err(csv_err(path))?;
    w.write_record([
        format!("{:.6}", report.continuous),
        format!("{:.6}", report.periodic_probe),
        format!("{:.6}", report.ddd),
        format!("{:.2}", report.continuous_over_ddd),
        format!("{:.2}", report.periodic_over_ddd),
    ])
    .map_err(csv_err(path))?;
    w.flush().map_err(|e| PipelineError::Stage {
        stage: Stage::Analyze,
        message: e.to_string(),
    })
}

fn write_best_windows_csv(
    best: &[(ModelKind, Vec<Feature>, u32, u32, f64)],
    path: &Path,
) -> CsvResult {
    let mut w = csv_writer(path)?;
    w.write_record(["model", "features", "horizon_min", "best_window_min", "f1_macro_test"])
        .map_err(csv_err(path))?;
    for (kind, fs, horizon, window, f1) in best {
        w.write_record([
            kind.to_string(),
            feature_set_name(fs),
            horizon.to_string(),
            window.to_string(),
            format!("{f1:.6}"),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| PipelineError::Stage {
        stage: Stage::Analyze,
        message: e.to_string(),
    })
}

fn write_workload_csv(queries: &[Query], path: &Path) -> CsvResult {
    let mut w = csv_writer(path)?;
    w.write_record(["id", "duration_s"]).map_err(csv_err(path))?;
    for q in queries {
        w.write_record([q.id.to_string(), format!("{}", q.duration_s)])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| PipelineError::Stage {
        stage: Stage::Analyze,
        message: e.to_string(),
    })
}

/// One named threshold check over pipeline outputs; `passed == None` means
/// the configured stages did not produce the inputs the check needs.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: Option<bool>,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub checks: Vec<Check>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed != Some(false))
    }
}

/// Threshold checks for CI runs (`pipeline --check`): probe conservatism,
/// co-interruption clustering, cost ratios, and the replay trade-off.
pub fn run_checks(report: &PipelineReport) -> CheckReport {
    let mut checks = Vec::new();

    checks.push(Check {
        name: "probe_overshoot_rare",
        passed: Some(report.compare.pct_actual_lt <= 1.0),
        detail: format!("actual<probe at {:.2}% of points (limit 1%)", report.compare.pct_actual_lt),
    });
    checks.push(Check {
        name: "probe_conservatism_band",
        passed: Some((5.0..=30.0).contains(&report.compare.pct_actual_gt)),
        detail: format!(
            "actual>probe at {:.2}% of points (band 5-30%)",
            report.compare.pct_actual_gt
        ),
    });
    checks.push(Check {
        name: "interruption_volume",
        passed: Some(report.interruption_count >= 1000),
        detail: format!("{} interruption events (need >= 1000)", report.interruption_count),
    });
    checks.push(Check {
        name: "co_interrupt_cdf_60s",
        passed: Some(report.proximity.value_at(60) >= 0.80),
        detail: format!("CDF(60s) = {:.4} (need >= 0.80)", report.proximity.value_at(60)),
    });
    checks.push(Check {
        name: "co_interrupt_cdf_180s",
        passed: Some(report.proximity.value_at(180) >= 0.87),
        detail: format!("CDF(180s) = {:.4} (need >= 0.87)", report.proximity.value_at(180)),
    });
    checks.push(Check {
        name: "cost_continuous_over_ddd",
        passed: Some(report.cost.continuous_over_ddd >= 100.0),
        detail: format!("{:.1}x (need >= 100x)", report.cost.continuous_over_ddd),
    });
    checks.push(Check {
        name: "cost_periodic_over_ddd",
        passed: Some(report.cost.periodic_over_ddd > 1.0),
        detail: format!("{:.1}x (need > 1x)", report.cost.periodic_over_ddd),
    });

    let mean_lost = |strategy: Strategy, horizon: u32| -> Option<f64> {
        let rows: Vec<&SummaryRow> = report
            .replay_summaries
            .iter()
            .filter(|s| s.strategy == strategy && s.horizon_min == horizon)
            .collect();
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|s| s.mean_lost_s).sum::<f64>() / rows.len() as f64)
    };
    let mean_idle = |strategy: Strategy, horizon: u32| -> Option<f64> {
        let rows: Vec<&SummaryRow> = report
            .replay_summaries
            .iter()
            .filter(|s| s.strategy == strategy && s.horizon_min == horizon)
            .collect();
        if rows.is_empty() {
            return None;
        }
        Some(rows.iter().map(|s| s.mean_idle_s).sum::<f64>() / rows.len() as f64)
    };
    let replay_check = match (mean_lost(Strategy::Predict, 15), mean_lost(Strategy::AlwaysRun, 0)) {
        (Some(predict), Some(always)) => Check {
            name: "replay_lost_reduction",
            passed: Some(predict <= 0.85 * always),
            detail: format!(
                "mean lost: predict@15 = {predict:.0} s vs always_run = {always:.0} s (need >= 15% lower)"
            ),
        },
        _ => Check {
            name: "replay_lost_reduction",
            passed: None,
            detail: "predict@15 or always_run not in replay config".into(),
        },
    };
    checks.push(replay_check);
    let idle_check = match (mean_idle(Strategy::Predict, 15), mean_idle(Strategy::Predict, 3)) {
        (Some(h15), Some(h3)) => Check {
            name: "replay_idle_tradeoff",
            passed: Some(h15 >= h3),
            detail: format!("mean idle: h15 = {h15:.0} s vs h3 = {h3:.0} s (need h15 >= h3)"),
        },
        _ => Check {
            name: "replay_idle_tradeoff",
            passed: None,
            detail: "predict horizons 3 and 15 not both in replay config".into(),
        },
    };
    checks.push(idle_check);

    CheckReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn non_divisible_window_fails_validation_before_any_stage() {
        let mut cfg = RunConfig::default();
        cfg.features.windows_min = vec![100]; // 100 % 3 != 0
        cfg.features.fidelity_window_min = 100;
        cfg.predictor.eval_windows_min = vec![100];
        cfg.replay.window_min = 100;
        let err = cfg.validate().unwrap_err();
        match err {
            PipelineError::Validation(errors) => {
                assert!(errors.iter().any(|e| e.contains("not divisible")), "{errors:?}");
            }
            other => panic!("unexpected: {other}"),
        }
    }

    #[test]
    fn config_hash_changes_iff_semantics_change() {
        let base = RunConfig::default();
        let same: RunConfig = toml::from_str(&toml::to_string(&base).unwrap()).unwrap();
        assert_eq!(base.hash(), same.hash());

        let mut reseeded = base.clone();
        reseeded.seed += 1;
        assert_ne!(base.hash(), reseeded.hash());

        let mut rewindowed = base.clone();
        rewindowed.features.windows_min = vec![60, 240];
        rewindowed.features.fidelity_window_min = 240;
        assert_ne!(base.hash(), rewindowed.hash());

        // Formatting and comments in the TOML never matter.
        let a: RunConfig =
            toml::from_str("seed = 7\n\n# comment\n[collection]\ninterval_min   = 3\n").unwrap();
        let b: RunConfig = toml::from_str("seed = 7\n[collection]\ninterval_min = 3\n").unwrap();
        assert_eq!(a.hash(), b.hash());
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let err = toml::from_str::<RunConfig>("sneaky_typo = 1\n");
        assert!(err.is_err());
    }

    #[test]
    fn minimal_config_round_trips_from_partial_toml() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 11
            [scenario]
            default_pools = 2
            [collection]
            interval_min = 3
            requests_per_cycle = 5
            duration_min = 60
            rate_limit_max = 100
            rate_limit_window_s = 60
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 11);
        assert_eq!(cfg.scenario.default_pools, 2);
        assert_eq!(cfg.collection.requests_per_cycle, 5);
        // Unspecified sections come from defaults.
        assert_eq!(cfg.features.windows_min, vec![60, 240, 720]);
    }
}
