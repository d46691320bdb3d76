//! Trace record types and JSONL file I/O shared by every pipeline stage.
//!
//! Five record kinds exist (probe, cycle, running, interruption, feature),
//! each stored as JSON-lines: one record per line, UTF-8, keys in the fixed
//! order given by the struct definitions below. Timestamps are integer
//! seconds from a per-trace epoch, and cycle indices are 1-based, so traces
//! are reproducible without wall-clock state. Every record carries a `v`
//! field reserved at value 1.

use crate::pool::PoolId;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const SCHEMA_VERSION: u8 = 1;

fn schema_v() -> u8 {
    SCHEMA_VERSION
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}:{line}: parse error: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: invariant violation: {message}")]
    Invariant {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: out-of-order record for pool {pool}: {message}")]
    Ordering {
        path: PathBuf,
        line: usize,
        pool: String,
        message: String,
    },
    #[error("record rejected before write: {0}")]
    InvalidRecord(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// The five trace schemas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceKind {
    Probe,
    Cycle,
    Running,
    Interruption,
    Feature,
}

/// Outcome of a single spot request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Accepted,
    Rejected,
}

/// One spot-request outcome: the atomic collection unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    #[serde(default = "schema_v")]
    pub v: u8,
    /// Seconds since trace epoch; always `cycle * interval`, i.e. aligned
    /// to the collection cycle regardless of intra-cycle throttling.
    pub ts: i64,
    pub cycle: u32,
    pub pool: PoolId,
    /// Index within the cycle's batch, a contiguous prefix of [0, N).
    pub request_index: u32,
    pub outcome: Outcome,
    /// Set when a submit failure was conservatively recorded as a rejection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Per-cycle aggregate: S_t accepted requests out of N submitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleMeasurement {
    #[serde(default = "schema_v")]
    pub v: u8,
    pub cycle: u32,
    pub pool: PoolId,
    pub successes: u32,
    pub requested: u32,
    /// Collection interval in minutes; stored per measurement so
    /// mixed-interval traces fail loudly downstream.
    pub interval_min: u32,
}

/// Actual running instance count observed at a cycle boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningRecord {
    #[serde(default = "schema_v")]
    pub v: u8,
    pub cycle: u32,
    pub pool: PoolId,
    pub running: u32,
}

/// One provider-initiated reclaim of a running node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterruptionEvent {
    #[serde(default = "schema_v")]
    pub v: u8,
    pub ts: i64,
    pub pool: PoolId,
    pub node_id: String,
}

/// Computed feature vector for one (pool, cycle), with per-horizon labels.
///
/// `sr` and `ur` are exact rationals internally and are emitted rounded to
/// six fractional digits. `labels` maps a horizon in minutes to the binary
/// availability label; horizons that extend past the trace end are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    #[serde(default = "schema_v")]
    pub v: u8,
    pub cycle: u32,
    pub pool: PoolId,
    pub window_min: u32,
    pub interval_min: u32,
    pub sr: f64,
    pub ur: f64,
    pub cut_min: u64,
    #[serde(default)]
    pub labels: BTreeMap<u32, bool>,
}

/// Common behavior the reader/writer needs from every record kind.
pub trait TraceRecord: Serialize + DeserializeOwned {
    const KIND: TraceKind;
    fn pool(&self) -> &PoolId;
    /// Key checked to be non-decreasing per pool in file order.
    fn order_key(&self) -> i64;
    fn validate(&self) -> Result<(), String>;
    /// (cycle, request_index, ts) for probe records; None for other kinds.
    fn probe_parts(&self) -> Option<(u32, u32, i64)> {
        None
    }
    fn csv_header() -> Vec<&'static str>;
    fn csv_row(&self) -> Vec<String>;
}

fn check_v(v: u8) -> Result<(), String> {
    if v != SCHEMA_VERSION {
        return Err(format!("unsupported schema version {v}, expected {SCHEMA_VERSION}"));
    }
    Ok(())
}

impl TraceRecord for ProbeRecord {
    const KIND: TraceKind = TraceKind::Probe;

    fn pool(&self) -> &PoolId {
        &self.pool
    }

    fn order_key(&self) -> i64 {
        ((self.cycle as i64) << 32) | self.request_index as i64
    }

    fn probe_parts(&self) -> Option<(u32, u32, i64)> {
        Some((self.cycle, self.request_index, self.ts))
    }

    fn validate(&self) -> Result<(), String> {
        check_v(self.v)?;
        self.pool.validate()?;
        if self.ts < 0 {
            return Err(format!("negative timestamp {}", self.ts));
        }
        if self.cycle > 0 && self.ts % self.cycle as i64 != 0 {
            return Err(format!(
                "ts {} is not cycle-aligned for cycle {}",
                self.ts, self.cycle
            ));
        }
        Ok(())
    }

    fn csv_header() -> Vec<&'static str> {
        vec![
            "v", "ts", "cycle", "instance_type", "region", "zone", "request_index", "outcome",
            "error",
        ]
    }

    fn csv_row(&self) -> Vec<String> {
        vec![
            self.v.to_string(),
            self.ts.to_string(),
            self.cycle.to_string(),
            self.pool.instance_type.clone(),
            self.pool.region.clone(),
            self.pool.zone.clone(),
            self.request_index.to_string(),
            match self.outcome {
                Outcome::Accepted => "accepted".into(),
                Outcome::Rejected => "rejected".into(),
            },
            self.error.clone().unwrap_or_default(),
        ]
    }
}

impl TraceRecord for CycleMeasurement {
    const KIND: TraceKind = TraceKind::Cycle;

    fn pool(&self) -> &PoolId {
        &self.pool
    }

    fn order_key(&self) -> i64 {
        self.cycle as i64
    }

    fn validate(&self) -> Result<(), String> {
        check_v(self.v)?;
        self.pool.validate()?;
        if self.cycle < 1 {
            return Err("cycle index must be >= 1".into());
        }
        if self.requested < 1 {
            return Err("requested count must be >= 1".into());
        }
        if self.successes > self.requested {
            return Err(format!(
                "successes {} exceeds requested {}",
                self.successes, self.requested
            ));
        }
        if self.interval_min == 0 {
            return Err("interval_min must be positive".into());
        }
        Ok(())
    }

    fn csv_header() -> Vec<&'static str> {
        vec![
            "v", "cycle", "instance_type", "region", "zone", "successes", "requested",
            "interval_min",
        ]
    }

    fn csv_row(&self) -> Vec<String> {
        vec![
            self.v.to_string(),
            self.cycle.to_string(),
            self.pool.instance_type.clone(),
            self.pool.region.clone(),
            self.pool.zone.clone(),
            self.successes.to_string(),
            self.requested.to_string(),
            self.interval_min.to_string(),
        ]
    }
}

impl TraceRecord for RunningRecord {
    const KIND: TraceKind = TraceKind::Running;

    fn pool(&self) -> &PoolId {
        &self.pool
    }

    fn order_key(&self) -> i64 {
        self.cycle as i64
    }

    fn validate(&self) -> Result<(), String> {
        check_v(self.v)?;
        self.pool.validate()?;
        if self.cycle < 1 {
            return Err("cycle index must be >= 1".into());
        }
        Ok(())
    }

    fn csv_header() -> Vec<&'static str> {
        vec!["v", "cycle", "instance_type", "region", "zone", "running"]
    }

    fn csv_row(&self) -> Vec<String> {
        vec![
            self.v.to_string(),
            self.cycle.to_string(),
            self.pool.instance_type.clone(),
            self.pool.region.clone(),
            self.pool.zone.clone(),
            self.running.to_string(),
        ]
    }
}

impl TraceRecord for InterruptionEvent {
    const KIND: TraceKind = TraceKind::Interruption;

    fn pool(&self) -> &PoolId {
        &self.pool
    }

    fn order_key(&self) -> i64 {
        self.ts
    }

    fn validate(&self) -> Result<(), String> {
        check_v(self.v)?;
        self.pool.validate()?;
        if self.ts < 0 {
            return Err(format!("negative timestamp {}", self.ts));
        }
        if self.node_id.is_empty() {
            return Err("empty node_id".into());
        }
        Ok(())
    }

    fn csv_header() -> Vec<&'static str> {
        vec!["v", "ts", "instance_type", "region", "zone", "node_id"]
    }

    fn csv_row(&self) -> Vec<String> {
        vec![
            self.v.to_string(),
            self.ts.to_string(),
            self.pool.instance_type.clone(),
            self.pool.region.clone(),
            self.pool.zone.clone(),
            self.node_id.clone(),
        ]
    }
}

impl TraceRecord for FeatureRecord {
    const KIND: TraceKind = TraceKind::Feature;

    fn pool(&self) -> &PoolId {
        &self.pool
    }

    fn order_key(&self) -> i64 {
        self.cycle as i64
    }

    fn validate(&self) -> Result<(), String> {
        check_v(self.v)?;
        self.pool.validate()?;
        if self.cycle < 1 {
            return Err("cycle index must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.sr) {
            return Err(format!("sr {} outside [0,1]", self.sr));
        }
        if !(0.0..=1.0).contains(&self.ur) {
            return Err(format!("ur {} outside [0,1]", self.ur));
        }
        if self.interval_min == 0 || self.window_min == 0 {
            return Err("interval_min and window_min must be positive".into());
        }
        if self.window_min % self.interval_min != 0 {
            return Err(format!(
                "window {} not divisible by interval {}",
                self.window_min, self.interval_min
            ));
        }
        Ok(())
    }

    fn csv_header() -> Vec<&'static str> {
        vec![
            "v", "cycle", "instance_type", "region", "zone", "window_min", "interval_min", "sr",
            "ur", "cut_min", "labels",
        ]
    }

    fn csv_row(&self) -> Vec<String> {
        let labels = self
            .labels
            .iter()
            .map(|(h, a)| format!("{h}:{}", if *a { 1 } else { 0 }))
            .collect::<Vec<_>>()
            .join(";");
        vec![
            self.v.to_string(),
            self.cycle.to_string(),
            self.pool.instance_type.clone(),
            self.pool.region.clone(),
            self.pool.zone.clone(),
            self.window_min.to_string(),
            self.interval_min.to_string(),
            format!("{}", self.sr),
            format!("{}", self.ur),
            self.cut_min.to_string(),
            labels,
        ]
    }
}

/// Per-pool bookkeeping while streaming a file, used to enforce ordering and
/// the contiguous-prefix property of probe request indices.
struct ReadState {
    last_key: HashMap<PoolId, i64>,
    // (cycle, request indices seen) for the probe group currently open per pool
    open_group: HashMap<PoolId, (u32, Vec<u32>)>,
    // implied seconds-per-cycle, from the first cycle-aligned record per pool
    implied_interval: HashMap<PoolId, i64>,
}

impl ReadState {
    fn new() -> Self {
        Self {
            last_key: HashMap::new(),
            open_group: HashMap::new(),
            implied_interval: HashMap::new(),
        }
    }

    fn close_group(pool: &PoolId, cycle: u32, mut seen: Vec<u32>) -> Result<(), String> {
        seen.sort_unstable();
        for (i, idx) in seen.iter().enumerate() {
            if *idx != i as u32 {
                return Err(format!(
                    "pool {pool} cycle {cycle}: request indices {seen:?} do not form a \
                     contiguous prefix of [0, N)"
                ));
            }
        }
        Ok(())
    }
}

/// Reads a JSONL trace of one record kind, enforcing per-record invariants
/// and per-pool ordering. Records are returned in file order.
pub fn read_trace<T: TraceRecord>(path: impl AsRef<Path>) -> Result<Vec<T>, TraceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut state = ReadState::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| TraceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: T = serde_json::from_str(&line).map_err(|source| TraceError::Parse {
            path: path.to_path_buf(),
            line: line_no,
            source,
        })?;
        record.validate().map_err(|message| TraceError::Invariant {
            path: path.to_path_buf(),
            line: line_no,
            message,
        })?;

        let pool = record.pool().clone();
        let key = record.order_key();
        if let Some(prev) = state.last_key.get(&pool) {
            if key < *prev {
                return Err(TraceError::Ordering {
                    path: path.to_path_buf(),
                    line: line_no,
                    pool: pool.to_string(),
                    message: format!("order key {key} after {prev}"),
                });
            }
        }
        state.last_key.insert(pool.clone(), key);

        if let Some((cycle, req, ts)) = record.probe_parts() {
            if cycle > 0 {
                let implied = ts / cycle as i64;
                match state.implied_interval.get(&pool) {
                    None => {
                        state.implied_interval.insert(pool.clone(), implied);
                    }
                    Some(dt) if *dt != implied => {
                        return Err(TraceError::Invariant {
                            path: path.to_path_buf(),
                            line: line_no,
                            message: format!(
                                "pool {pool}: ts {ts} implies {implied}s per cycle, \
                                 expected {dt}s"
                            ),
                        });
                    }
                    _ => {}
                }
            }
            match state.open_group.get_mut(&pool) {
                Some((open_cycle, seen)) if *open_cycle == cycle => seen.push(req),
                Some((open_cycle, seen)) => {
                    let (c, s) = (*open_cycle, std::mem::take(seen));
                    ReadState::close_group(&pool, c, s).map_err(|message| {
                        TraceError::Invariant {
                            path: path.to_path_buf(),
                            line: line_no,
                            message,
                        }
                    })?;
                    state.open_group.insert(pool.clone(), (cycle, vec![req]));
                }
                None => {
                    state.open_group.insert(pool.clone(), (cycle, vec![req]));
                }
            }
        }

        out.push(record);
    }

    // Close any probe groups still open at EOF.
    for (pool, (cycle, seen)) in state.open_group {
        ReadState::close_group(&pool, cycle, seen).map_err(|message| TraceError::Invariant {
            path: path.to_path_buf(),
            line: 0,
            message,
        })?;
    }

    Ok(out)
}

fn write_impl<T: TraceRecord>(
    records: &[T],
    path: &Path,
    append: bool,
) -> Result<(), TraceError> {
    // Validate everything before touching the file.
    for (i, r) in records.iter().enumerate() {
        r.validate()
            .map_err(|m| TraceError::InvalidRecord(format!("record {i}: {m}")))?;
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| TraceError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
    }
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|source| TraceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    let mut w = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|source| TraceError::Parse {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        w.write_all(b"\n").map_err(|source| TraceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes records as JSONL, one per line, byte-stable field order.
/// All records are validated before any byte is written.
pub fn write_trace<T: TraceRecord>(records: &[T], path: impl AsRef<Path>) -> Result<(), TraceError> {
    write_impl(records, path.as_ref(), false)
}

/// Appends records to an existing trace. Ordering across the concatenation
/// is enforced on the next read, not here.
pub fn append_trace<T: TraceRecord>(
    records: &[T],
    path: impl AsRef<Path>,
) -> Result<(), TraceError> {
    write_impl(records, path.as_ref(), true)
}

/// CSV export mirroring the JSONL columns (pool flattened to three columns).
pub fn write_csv<T: TraceRecord>(records: &[T], path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    for (i, r) in records.iter().enumerate() {
        r.validate()
            .map_err(|m| TraceError::InvalidRecord(format!("record {i}: {m}")))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| TraceError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    w.write_record(T::csv_header()).map_err(|e| TraceError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    for r in records {
        w.write_record(r.csv_row()).map_err(|e| TraceError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
    }
    w.flush().map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pool() -> PoolId {
        PoolId::new("m5.large", "us-east-1", "us-east-1a")
    }

    fn cycle_record(cycle: u32, s: u32) -> CycleMeasurement {
        CycleMeasurement {
            v: 1,
            cycle,
            pool: pool(),
            successes: s,
            requested: 10,
            interval_min: 3,
        }
    }

    #[test]
    fn reads_valid_cycle_lines_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cycles.jsonl");
        let records = vec![cycle_record(1, 10), cycle_record(2, 7), cycle_record(3, 0)];
        write_trace(&records, &path).unwrap();
        let back: Vec<CycleMeasurement> = read_trace(&path).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn empty_file_yields_empty_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let back: Vec<CycleMeasurement> = read_trace(&path).unwrap();
        assert!(back.is_empty());
    }

    #[test]
    fn bound_violation_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let good = serde_json::to_string(&cycle_record(1, 10)).unwrap();
        let mut bad_rec = cycle_record(2, 10);
        bad_rec.successes = 11;
        // Serialize without validation by hand-editing the JSON.
        let bad = serde_json::to_string(&bad_rec).unwrap();
        std::fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        let err = read_trace::<CycleMeasurement>(&path).unwrap_err();
        match err {
            TraceError::Invariant { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("11"), "{message}");
            }
            other => panic!("expected invariant error, got {other}"),
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{not json\n").unwrap();
        let err = read_trace::<CycleMeasurement>(&path).unwrap_err();
        match err {
            TraceError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn invalid_record_rejected_before_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("never.jsonl");
        let mut bad = cycle_record(1, 10);
        bad.successes = 11;
        let err = write_trace(&[bad], &path).unwrap_err();
        assert!(matches!(err, TraceError::InvalidRecord(_)));
        assert!(!path.exists());
    }

    #[test]
    fn append_keeps_monotone_or_errors_on_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cycles.jsonl");
        write_trace(&[cycle_record(1, 10), cycle_record(2, 9)], &path).unwrap();
        append_trace(&[cycle_record(3, 8)], &path).unwrap();
        let back: Vec<CycleMeasurement> = read_trace(&path).unwrap();
        assert_eq!(back.len(), 3);

        // Appending an older cycle concatenates fine but fails on read.
        append_trace(&[cycle_record(2, 5)], &path).unwrap();
        let err = read_trace::<CycleMeasurement>(&path).unwrap_err();
        assert!(matches!(err, TraceError::Ordering { .. }));
    }

    #[test]
    fn probe_indices_must_be_contiguous_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probes.jsonl");
        let mk = |idx: u32| ProbeRecord {
            v: 1,
            ts: 180,
            cycle: 1,
            pool: pool(),
            request_index: idx,
            outcome: Outcome::Accepted,
            error: None,
        };
        // Missing index 1.
        let recs = vec![mk(0), mk(2)];
        let lines: Vec<String> = recs
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        let err = read_trace::<ProbeRecord>(&path).unwrap_err();
        assert!(matches!(err, TraceError::Invariant { .. }), "{err}");

        let recs = vec![mk(0), mk(1), mk(2)];
        write_trace(&recs, &path).unwrap();
        assert_eq!(read_trace::<ProbeRecord>(&path).unwrap().len(), 3);
    }

    #[test]
    fn feature_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.jsonl");
        let mut labels = BTreeMap::new();
        labels.insert(3u32, true);
        labels.insert(15u32, false);
        let rec = FeatureRecord {
            v: 1,
            cycle: 4,
            pool: pool(),
            window_min: 9,
            interval_min: 3,
            sr: 1.0,
            ur: 0.1,
            cut_min: 0,
            labels,
        };
        write_trace(&[rec.clone()], &path).unwrap();
        let back: Vec<FeatureRecord> = read_trace(&path).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn csv_mirrors_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cycles.csv");
        write_csv(&[cycle_record(1, 10)], &path).unwrap();
        let body = std::fs::read_to_string(&path).unwrap();
        let mut lines = body.lines();
        assert_eq!(
            lines.next().unwrap(),
            "v,cycle,instance_type,region,zone,successes,requested,interval_min"
        );
        assert_eq!(lines.next().unwrap(), "1,1,m5.large,us-east-1,us-east-1a,10,10,3");
    }

    proptest! {
        // Round-trip: deserialize . serialize is the identity on valid records.
        #[test]
        fn probe_round_trip(recs in arb_probe()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("p.jsonl");
            write_trace(&recs, &path).unwrap();
            let back: Vec<ProbeRecord> = read_trace(&path).unwrap();
            prop_assert_eq!(back, recs);
        }
    }

    // Valid probe records: one pool, cycles ascending, contiguous indices.
    fn arb_probe() -> impl Strategy<Value = Vec<ProbeRecord>> {
        proptest::collection::vec((1u32..30, 1u32..8), 1..12).prop_map(|cycles| {
            let mut cycle_no = 0u32;
            let mut out = Vec::new();
            for (gap, n) in cycles {
                cycle_no += gap;
                for idx in 0..n {
                    out.push(ProbeRecord {
                        v: 1,
                        ts: cycle_no as i64 * 180,
                        cycle: cycle_no,
                        pool: PoolId::new("m5.large", "us-east-1", "us-east-1a"),
                        request_index: idx,
                        outcome: if idx % 2 == 0 { Outcome::Accepted } else { Outcome::Rejected },
                        error: None,
                    });
                }
            }
            out
        })
    }
}
