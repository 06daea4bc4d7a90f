use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::api::ScoreResponse;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentRecord {
    pub assessment_id: String,
    pub user_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: u64,
    pub result: ScoreResponse,
    pub pipeline_version: String,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("store file {path} line {line}: {cause}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        cause: String,
    },
}

/// Persistent per-user assessment history.
pub trait AssessmentStore: Send + Sync {
    fn append(&self, record: &AssessmentRecord) -> Result<(), StoreError>;

    /// Records of `user_id` ordered by `(timestamp, assessment_id)`.
    fn list(&self, user_id: &str) -> Vec<AssessmentRecord>;

    fn has_user(&self, user_id: &str) -> bool;

    /// Every stored record, for id and clock recovery at startup.
    fn all(&self) -> Vec<AssessmentRecord>;
}

fn sort_key(r: &AssessmentRecord) -> (u64, &str) {
    (r.timestamp, r.assessment_id.as_str())
}

#[derive(Debug, Default)]
pub struct MemoryStore {
    users: Mutex<HashMap<String, Vec<AssessmentRecord>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    fn insert(&self, record: AssessmentRecord) {
        let mut users = self.users.lock().unwrap_or_else(|p| p.into_inner());
        let list = users.entry(record.user_id.clone()).or_default();
        let at = list.partition_point(|r| sort_key(r) <= sort_key(&record));
        list.insert(at, record);
    }
}

impl AssessmentStore for MemoryStore {
    fn append(&self, record: &AssessmentRecord) -> Result<(), StoreError> {
        self.insert(record.clone());
        Ok(())
    }

    fn list(&self, user_id: &str) -> Vec<AssessmentRecord> {
        let users = self.users.lock().unwrap_or_else(|p| p.into_inner());
        users.get(user_id).cloned().unwrap_or_default()
    }

    fn has_user(&self, user_id: &str) -> bool {
        let users = self.users.lock().unwrap_or_else(|p| p.into_inner());
        users.contains_key(user_id)
    }

    fn all(&self) -> Vec<AssessmentRecord> {
        let users = self.users.lock().unwrap_or_else(|p| p.into_inner());
        users.values().flatten().cloned().collect()
    }
}

/// One JSON record per line, appended and flushed on every write; the file
/// is replayed into memory on open.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    file: Mutex<File>,
    index: MemoryStore,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io)?;
        }
        let index = MemoryStore::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if line.trim().is_empty() {
                    continue;
                }
                let record = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                    path: path.clone(),
                    line: i + 1,
                    cause: e.to_string(),
                })?;
                index.insert(record);
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io)?;
        Ok(Self {
            path,
            file: Mutex::new(file),
            index,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl AssessmentStore for FileStore {
    fn append(&self, record: &AssessmentRecord) -> Result<(), StoreError> {
        let mut line = serde_json::to_string(record).expect("record serializes");
        line.push('\n');
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|()| file.flush())
            .and_then(|()| file.sync_data())
            .map_err(|source| StoreError::Io {
                path: self.path.clone(),
                source,
            })?;
        self.index.insert(record.clone());
        Ok(())
    }

    fn list(&self, user_id: &str) -> Vec<AssessmentRecord> {
        self.index.list(user_id)
    }

    fn has_user(&self, user_id: &str) -> bool {
        self.index.has_user(user_id)
    }

    fn all(&self) -> Vec<AssessmentRecord> {
        self.index.all()
    }
}
