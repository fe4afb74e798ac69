//! Iteration bookkeeping: per-category run comparison, error clusters and
//! the append-only `runs/index.jsonl` ledger.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{Category, RunConfig};
use crate::reporting::{RunReport, ScoredSample};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum HillclimbError {
    #[error("runs differ in {what}: {a} vs {b}")]
    Mismatch { what: &'static str, a: String, b: String },
    #[error("top_k must be at least 1")]
    ZeroTopK,
    #[error("unknown parent run {0}")]
    UnknownParent(String),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("run {0} is already recorded")]
    DuplicateRun(String),
    #[error("iteration store {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("iteration store {path} line {line}: {reason}")]
    Corrupt { path: PathBuf, line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: DeserializeOwned"))]
pub struct IterationRecord<S> {
    pub run_id: String,
    pub config: RunConfig,
    pub report: RunReport<S>,
    #[serde(default)]
    pub parent_run_id: Option<String>,
}

/// Per-category change between two runs. A category absent from one side
/// counts as zero there for `delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: DeserializeOwned"))]
pub struct CategoryDelta<S> {
    pub category: Category,
    pub before: Option<S>,
    pub after: Option<S>,
    pub delta: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Serialize", deserialize = "S: DeserializeOwned"))]
pub struct RunComparison<S> {
    /// Largest increase (worst regression) first.
    pub categories: Vec<CategoryDelta<S>>,
    pub overall_before: S,
    pub overall_after: S,
    pub overall_delta: S,
}

/// Compare `before` to `after`; both must share locale and system.
pub fn compare_runs<S: Scalar>(before: &RunReport<S>, after: &RunReport<S>) -> Result<RunComparison<S>, HillclimbError> {
    let (a, b) = (&before.config, &after.config);
    if a.locale != b.locale {
        return Err(HillclimbError::Mismatch { what: "locale", a: a.locale.to_string(), b: b.locale.to_string() });
    }
    if a.system_id != b.system_id {
        return Err(HillclimbError::Mismatch { what: "system", a: a.system_id.clone(), b: b.system_id.clone() });
    }
    let categories: BTreeSet<Category> = before.per_category.keys().chain(after.per_category.keys()).copied().collect();
    let mut deltas: Vec<CategoryDelta<S>> = categories
        .into_iter()
        .map(|category| {
            let before = before.per_category.get(&category).map(|c| c.rate);
            let after = after.per_category.get(&category).map(|c| c.rate);
            let delta = after.unwrap_or_else(S::zero) - before.unwrap_or_else(S::zero);
            CategoryDelta { category, before, after, delta }
        })
        .collect();
    deltas.sort_by(|x, y| y.delta.partial_cmp(&x.delta).unwrap_or(std::cmp::Ordering::Equal).then(x.category.cmp(&y.category)));
    Ok(RunComparison {
        categories: deltas,
        overall_before: before.overall_rate,
        overall_after: after.overall_rate,
        overall_delta: after.overall_rate - before.overall_rate,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorCluster {
    pub category: Category,
    pub error_count: usize,
    /// Up to three samples with the highest rates.
    pub example_ids: Vec<String>,
}

pub const CLUSTER_EXAMPLES: usize = 3;

/// Categories ranked by total edit count, highest first.
pub fn cluster_errors<S: Scalar>(scored: &[ScoredSample<S>], top_k: usize) -> Result<Vec<ErrorCluster>, HillclimbError> {
    if top_k == 0 {
        return Err(HillclimbError::ZeroTopK);
    }
    let mut by_category: BTreeMap<Category, Vec<&ScoredSample<S>>> = BTreeMap::new();
    for s in scored.iter().filter(|s| s.metric.edit_counts.edits() > 0) {
        by_category.entry(s.sample.category).or_default().push(s);
    }
    let mut clusters: Vec<ErrorCluster> = by_category
        .into_iter()
        .map(|(category, mut samples)| {
            samples.sort_by(|a, b| {
                b.metric
                    .wer_or_cer
                    .partial_cmp(&a.metric.wer_or_cer)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| a.sample.id.cmp(&b.sample.id))
            });
            ErrorCluster {
                category,
                error_count: samples.iter().map(|s| s.metric.edit_counts.edits()).sum(),
                example_ids: samples.iter().take(CLUSTER_EXAMPLES).map(|s| s.sample.id.clone()).collect(),
            }
        })
        .collect();
    clusters.sort_by(|a, b| b.error_count.cmp(&a.error_count).then(a.category.cmp(&b.category)));
    clusters.truncate(top_k);
    Ok(clusters)
}

/// Digest of the configuration and creation time, hex, 16 characters.
pub fn run_id_for(config: &RunConfig, created_at: DateTime<Utc>) -> String {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(config).expect("config serializes"));
    h.update(b"\n");
    h.update(created_at.to_rfc3339_opts(SecondsFormat::AutoSi, true).as_bytes());
    hex::encode(h.finalize())[..16].to_string()
}

pub const INDEX_FILE: &str = "index.jsonl";

/// Append-only ledger of iteration records under a runs directory.
#[derive(Debug)]
pub struct IterationStore {
    dir: PathBuf,
    writer: Mutex<()>,
}

impl IterationStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, HillclimbError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| HillclimbError::Io { path: dir.clone(), source })?;
        Ok(IterationStore { dir, writer: Mutex::new(()) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn index_path(&self) -> PathBuf {
        self.dir.join(INDEX_FILE)
    }

    /// All records in insertion order.
    pub fn records(&self) -> Result<Vec<IterationRecord<f64>>, HillclimbError> {
        let path = self.index_path();
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(source) => return Err(HillclimbError::Io { path, source }),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| HillclimbError::Corrupt { path: path.clone(), line: i + 1, reason: e.to_string() })
            })
            .collect()
    }

    pub fn get(&self, run_id: &str) -> Result<IterationRecord<f64>, HillclimbError> {
        self.records()?
            .into_iter()
            .find(|r| r.run_id == run_id)
            .ok_or_else(|| HillclimbError::UnknownRun(run_id.to_string()))
    }

    /// Append a record. The parent must already be present and the run id
    /// must be new, which keeps the parent graph acyclic.
    pub fn append(&self, record: &IterationRecord<f64>) -> Result<(), HillclimbError> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let existing = self.records()?;
        if existing.iter().any(|r| r.run_id == record.run_id) {
            return Err(HillclimbError::DuplicateRun(record.run_id.clone()));
        }
        if let Some(parent) = &record.parent_run_id {
            if !existing.iter().any(|r| &r.run_id == parent) {
                return Err(HillclimbError::UnknownParent(parent.clone()));
            }
        }
        let path = self.index_path();
        let io = |source| HillclimbError::Io { path: path.clone(), source };
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        file.write_all(line.as_bytes()).map_err(io)?;
        file.sync_data().map_err(io)
    }

    /// Chain from the root ancestor down to `run_id`.
    pub fn lineage(&self, run_id: &str) -> Result<Vec<IterationRecord<f64>>, HillclimbError> {
        let records: HashMap<String, IterationRecord<f64>> =
            self.records()?.into_iter().map(|r| (r.run_id.clone(), r)).collect();
        let mut chain = Vec::new();
        let mut cursor = Some(run_id.to_string());
        while let Some(id) = cursor {
            let record = records.get(&id).ok_or_else(|| HillclimbError::UnknownRun(id.clone()))?;
            cursor = record.parent_run_id.clone();
            chain.push(record.clone());
            if chain.len() > records.len() {
                return Err(HillclimbError::Corrupt { path: self.index_path(), line: 0, reason: "parent cycle".into() });
            }
        }
        chain.reverse();
        Ok(chain)
    }
}

/// Record a finished report as a new iteration.
pub fn record_iteration(
    report: RunReport<f64>,
    parent: Option<&str>,
    store: &IterationStore,
) -> Result<IterationRecord<f64>, HillclimbError> {
    let record = IterationRecord {
        run_id: run_id_for(&report.config, report.created_at),
        config: report.config.clone(),
        report,
        parent_run_id: parent.map(str::to_string),
    };
    store.append(&record)?;
    Ok(record)
}
