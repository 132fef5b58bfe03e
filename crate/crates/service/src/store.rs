use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::session::SessionState;

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("stored session {id} is corrupt: {message}")]
    Corrupt { id: String, message: String },
}

pub trait Store: Send + Sync {
    fn load(&self, id: &str) -> Result<Option<SessionState>, StorageError>;
    fn save(&self, state: &SessionState) -> Result<(), StorageError>;
}

fn encode(state: &SessionState) -> String {
    serde_json::to_string_pretty(state).expect("session state serializes")
}

fn decode(id: &str, raw: &str) -> Result<SessionState, StorageError> {
    serde_json::from_str(raw).map_err(|e| StorageError::Corrupt { id: id.to_string(), message: e.to_string() })
}

/// Keeps sessions as JSON text so the round trip matches the file store.
#[derive(Default)]
pub struct MemoryStore {
    docs: Mutex<HashMap<String, String>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Store for MemoryStore {
    fn load(&self, id: &str) -> Result<Option<SessionState>, StorageError> {
        self.docs.lock().unwrap().get(id).map(|raw| decode(id, raw)).transpose()
    }

    fn save(&self, state: &SessionState) -> Result<(), StorageError> {
        self.docs.lock().unwrap().insert(state.session_id.clone(), encode(state));
        Ok(())
    }
}

/// One `<id>.json` per session in a directory.
pub struct FileStore {
    dir: PathBuf,
}

impl FileStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| StorageError::Io { path: dir.clone(), message: e.to_string() })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, id: &str) -> Result<PathBuf, StorageError> {
        let ok = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !ok {
            return Err(StorageError::Io { path: self.dir.clone(), message: format!("invalid session id {id:?}") });
        }
        Ok(self.dir.join(format!("{id}.json")))
    }
}

impl Store for FileStore {
    fn load(&self, id: &str) -> Result<Option<SessionState>, StorageError> {
        let path = self.path(id)?;
        match std::fs::read_to_string(&path) {
            Ok(raw) => decode(id, &raw).map(Some),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(StorageError::Io { path, message: e.to_string() }),
        }
    }

    fn save(&self, state: &SessionState) -> Result<(), StorageError> {
        let path = self.path(&state.session_id)?;
        let tmp = self.dir.join(format!(".{}.json.tmp", state.session_id));
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |e: std::io::Error| StorageError::Io { path: p, message: e.to_string() }
        };
        std::fs::write(&tmp, encode(state)).map_err(io(&tmp))?;
        std::fs::rename(&tmp, &path).map_err(io(&path))
    }
}
