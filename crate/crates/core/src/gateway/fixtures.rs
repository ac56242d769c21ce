use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::{transcript_key, AgentRole, Completion};

/// One recorded exchange, stored as `<key>.json` in the fixture directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fixture {
    pub key: String,
    pub role: AgentRole,
    pub prompt: String,
    pub completion: Completion,
}

/// Directory of fixtures, loaded once. Lookups are read-only; recording adds
/// entries and writes them through to disk.
#[derive(Debug, Default)]
pub struct FixtureStore {
    dir: Option<PathBuf>,
    entries: RwLock<HashMap<String, Fixture>>,
}

impl FixtureStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads every `*.json` file in `dir`. A missing directory is created
    /// empty so record mode can start from scratch.
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut entries = HashMap::new();
        for entry in fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let fixture: Fixture = serde_json::from_slice(&fs::read(&path)?).map_err(|e| {
                io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                )
            })?;
            if transcript_key(&fixture.prompt) != fixture.key {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("{}: key does not match prompt hash", path.display()),
                ));
            }
            entries.insert(fixture.key.clone(), fixture);
        }
        Ok(Self {
            dir: Some(dir),
            entries: RwLock::new(entries),
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, prompt: &str) -> Option<Fixture> {
        let key = transcript_key(prompt);
        self.entries
            .read()
            .unwrap()
            .get(&key)
            .filter(|f| f.prompt == prompt)
            .cloned()
    }

    pub fn insert(&self, role: AgentRole, prompt: &str, completion: Completion) {
        let key = transcript_key(prompt);
        let fixture = Fixture {
            key: key.clone(),
            role,
            prompt: prompt.to_string(),
            completion,
        };
        self.entries.write().unwrap().insert(key, fixture);
    }

    pub fn record(&self, role: AgentRole, prompt: &str, completion: &Completion) -> io::Result<()> {
        self.insert(role, prompt, completion.clone());
        if let Some(dir) = &self.dir {
            let key = transcript_key(prompt);
            let entries = self.entries.read().unwrap();
            let json = serde_json::to_string_pretty(&entries[&key])?;
            fs::write(dir.join(format!("{key}.json")), json + "\n")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_then_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let store = FixtureStore::open(dir.path()).unwrap();
        store
            .record(AgentRole::Moderator, "p1", &Completion::stop("c1"))
            .unwrap();
        let reopened = FixtureStore::open(dir.path()).unwrap();
        assert_eq!(reopened.len(), 1);
        assert_eq!(reopened.lookup("p1").unwrap().completion.text, "c1");
        assert!(reopened.lookup("p2").is_none());
        assert!(dir.path().join(format!("{}.json", transcript_key("p1"))).exists());
    }

    #[test]
    fn tampered_fixture_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let fixture = Fixture {
            key: "00".into(),
            role: AgentRole::Moderator,
            prompt: "p".into(),
            completion: Completion::stop("c"),
        };
        fs::write(dir.path().join("00.json"), serde_json::to_string(&fixture).unwrap()).unwrap();
        assert!(FixtureStore::open(dir.path()).is_err());
    }
}
