//! Linear, copy-on-write history of ICL store versions backed by
//! `icl_edits.jsonl`.

use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use polynorm_core::prompting::{IclStore, PromptError};
use polynorm_core::IclExample;
use serde::{Deserialize, Serialize};

use crate::ledger::Ledger;
use crate::{ApiError, ServiceError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IclOp {
    Add,
    Update,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclEdit {
    pub op: IclOp,
    pub example: IclExample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IclEditRecord {
    pub op: IclOp,
    pub example: IclExample,
    pub previous_version: String,
    pub version: String,
    pub at: DateTime<Utc>,
}

/// One entry of the version history. The first entry is the initial store
/// and carries no edit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IclVersion {
    pub version: String,
    pub size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edit: Option<IclEditRecord>,
}

pub struct IclHistory {
    ledger: Ledger<IclEditRecord>,
    versions: RwLock<Arc<Vec<Arc<IclStore>>>>,
    writer: Mutex<()>,
}

fn apply(store: &IclStore, edit: &IclEdit) -> Result<IclStore, PromptError> {
    match edit.op {
        IclOp::Add => store.with_added(edit.example.clone()),
        IclOp::Update => store.with_updated(edit.example.clone()),
        IclOp::Remove => store.with_removed(&edit.example),
    }
}

impl IclHistory {
    /// Start from `initial` and replay the edit ledger on top of it.
    pub fn open(initial: IclStore, ledger_path: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let ledger: Ledger<IclEditRecord> = Ledger::open(ledger_path)?;
        let mut stores = vec![Arc::new(initial)];
        for (i, record) in ledger.snapshot().iter().enumerate() {
            let last = stores.last().expect("initial store");
            let edit = IclEdit { op: record.op, example: record.example.clone() };
            let next = apply(last, &edit)
                .map_err(|e| ServiceError::Ledger(format!("{} entry {}: {e}", ledger.path().display(), i + 1)))?;
            if last.version() != record.previous_version || next.version() != record.version {
                return Err(ServiceError::Ledger(format!(
                    "{} entry {} does not follow from the initial ICL store",
                    ledger.path().display(),
                    i + 1
                )));
            }
            stores.push(Arc::new(next));
        }
        Ok(IclHistory { ledger, versions: RwLock::new(Arc::new(stores)), writer: Mutex::new(()) })
    }

    fn stores(&self) -> Arc<Vec<Arc<IclStore>>> {
        self.versions.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn current(&self) -> Arc<IclStore> {
        self.stores().last().expect("initial store").clone()
    }

    pub fn find(&self, version: &str) -> Option<Arc<IclStore>> {
        self.stores().iter().rev().find(|s| s.version() == version).cloned()
    }

    pub fn history(&self) -> Vec<IclVersion> {
        let stores = self.stores();
        let edits = self.ledger.snapshot();
        stores
            .iter()
            .enumerate()
            .map(|(i, s)| IclVersion {
                version: s.version().to_string(),
                size: s.len(),
                edit: i.checked_sub(1).map(|j| edits[j].clone()),
            })
            .collect()
    }

    /// Apply an edit on top of the latest version. `expected` is the
    /// version the client based its edit on.
    pub fn edit(&self, edit: IclEdit, expected: Option<&str>) -> Result<IclEditRecord, ApiError> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.current();
        if let Some(expected) = expected {
            if expected != current.version() {
                return Err(ApiError::Conflict(format!(
                    "ICL store is at version {}, edit was based on {expected}",
                    current.version()
                )));
            }
        }
        let next = apply(&current, &edit).map_err(|e| match e {
            PromptError::UnknownExample(_) => ApiError::NotFound(e.to_string()),
            PromptError::DuplicateExample(_) => ApiError::Conflict(e.to_string()),
            other => ApiError::Unprocessable(other.to_string()),
        })?;
        let record = IclEditRecord {
            op: edit.op,
            example: edit.example,
            previous_version: current.version().to_string(),
            version: next.version().to_string(),
            at: Utc::now(),
        };
        let record = self.ledger.append_with(|_| Ok::<_, ApiError>(record))?;
        let mut stores = (*self.stores()).clone();
        stores.push(Arc::new(next));
        *self.versions.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(stores);
        Ok(record)
    }
}
