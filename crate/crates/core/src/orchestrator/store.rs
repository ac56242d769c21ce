//! One directory per job, holding `state.json` and the artifact files.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use super::{JobState, OrchestratorError, SCHEMA_VERSION};

#[derive(Debug, Clone)]
pub struct JobStore {
    root: PathBuf,
    active: Arc<Mutex<HashSet<String>>>,
    writes: Arc<Mutex<()>>,
}

/// Exclusive right to drive one job; released on drop.
#[derive(Debug)]
pub struct JobGuard {
    id: String,
    active: Arc<Mutex<HashSet<String>>>,
}

impl JobGuard {
    pub fn id(&self) -> &str {
        &self.id
    }
}

impl Drop for JobGuard {
    fn drop(&mut self) {
        self.active.lock().unwrap().remove(&self.id);
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

impl JobStore {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            active: Arc::default(),
            writes: Arc::default(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn job_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    pub fn exists(&self, id: &str) -> bool {
        valid_id(id) && self.job_dir(id).join("state.json").is_file()
    }

    /// Atomic write: temp file then rename.
    pub fn persist(&self, state: &JobState) -> Result<(), OrchestratorError> {
        let dir = self.job_dir(&state.id);
        fs::create_dir_all(&dir)?;
        let json = serde_json::to_vec_pretty(state).expect("job state serializes");
        let _w = self.writes.lock().unwrap();
        let tmp = dir.join("state.json.tmp");
        fs::write(&tmp, json)?;
        fs::rename(&tmp, dir.join("state.json"))?;
        Ok(())
    }

    pub fn load(&self, id: &str) -> Result<JobState, OrchestratorError> {
        if !self.exists(id) {
            return Err(OrchestratorError::NotFound(id.to_string()));
        }
        let bytes = fs::read(self.job_dir(id).join("state.json"))?;
        let value: serde_json::Value =
            serde_json::from_slice(&bytes).map_err(|e| OrchestratorError::CorruptState(e.to_string()))?;
        let version = value.get("schema_version").and_then(|v| v.as_u64());
        if version != Some(SCHEMA_VERSION as u64) {
            return Err(OrchestratorError::CorruptState(format!(
                "schema version {version:?}, expected {SCHEMA_VERSION}"
            )));
        }
        serde_json::from_value(value).map_err(|e| OrchestratorError::CorruptState(e.to_string()))
    }

    pub fn list(&self) -> Vec<String> {
        let mut ids: Vec<String> = fs::read_dir(&self.root)
            .into_iter()
            .flatten()
            .flatten()
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|id| self.exists(id))
            .collect();
        ids.sort();
        ids
    }

    pub fn try_lock(&self, id: &str) -> Option<JobGuard> {
        let mut active = self.active.lock().unwrap();
        if !active.insert(id.to_string()) {
            return None;
        }
        Some(JobGuard {
            id: id.to_string(),
            active: self.active.clone(),
        })
    }

    pub fn is_locked(&self, id: &str) -> bool {
        self.active.lock().unwrap().contains(id)
    }

    /// Resolves an artifact path recorded in a state, relative to the job.
    pub fn artifact_path(&self, id: &str, rel: &str) -> PathBuf {
        self.job_dir(id).join(rel)
    }

    pub fn write_artifact(&self, id: &str, rel: &str, bytes: impl AsRef<[u8]>) -> Result<String, OrchestratorError> {
        let path = self.artifact_path(id, rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("partial");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, &path)?;
        Ok(rel.to_string())
    }
}
