//! Append-only JSON-lines file with an in-memory snapshot.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::ServiceError;

pub struct Ledger<T> {
    path: PathBuf,
    entries: RwLock<Arc<Vec<T>>>,
    writer: Mutex<()>,
}

impl<T: Serialize + DeserializeOwned + Clone> Ledger<T> {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ServiceError> {
        let path = path.into();
        let entries = match fs::read_to_string(&path) {
            Ok(text) => text
                .lines()
                .enumerate()
                .filter(|(_, l)| !l.trim().is_empty())
                .map(|(i, l)| {
                    serde_json::from_str(l)
                        .map_err(|e| ServiceError::Ledger(format!("{} line {}: {e}", path.display(), i + 1)))
                })
                .collect::<Result<Vec<T>, _>>()?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(ServiceError::Ledger(format!("{}: {e}", path.display()))),
        };
        Ok(Ledger { path, entries: RwLock::new(Arc::new(entries)), writer: Mutex::new(()) })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn snapshot(&self) -> Arc<Vec<T>> {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Build the next entry from the current snapshot and append it, with
    /// no other append in between.
    pub fn append_with<E>(&self, make: impl FnOnce(&[T]) -> Result<T, E>) -> Result<T, E>
    where
        E: From<ServiceError>,
    {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let current = self.snapshot();
        let entry = make(&current)?;
        let mut line = serde_json::to_string(&entry).map_err(|e| ServiceError::Ledger(e.to_string()))?;
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| f.write_all(line.as_bytes()).and_then(|_| f.sync_data()))
            .map_err(|e| ServiceError::Ledger(format!("{}: {e}", self.path.display())))?;
        let mut next = (*current).clone();
        next.push(entry.clone());
        *self.entries.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(next);
        Ok(entry)
    }
}
