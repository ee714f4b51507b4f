//! Registry of uploaded model bundles with a single active model.
//!
//! Bundles are validated by loading them before they are accepted. At most
//! one entry is active; after the first activation exactly one always is.
//! Activation swaps the shared handle atomically: predictions already
//! holding the previous handle finish on it, later ones see the new one.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::atomic_write;
use crate::inference::{load_model, InferenceError, ModelBundle, ModelHandle, ModelMetadata};

pub const INDEX_FILE: &str = "models.json";

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("model `{0}` not found")]
    NotFound(String),
    #[error("model `{id}` is already registered with a different checksum")]
    Conflict { id: String },
    #[error(transparent)]
    Bundle(#[from] InferenceError),
    #[error("storage error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt registry index {path}: {message}")]
    Corrupt { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistryEntry {
    /// `name@version`.
    pub id: String,
    pub metadata: ModelMetadata,
    pub checksum: String,
    pub active: bool,
    pub uploaded_at: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct Index {
    entries: Vec<ModelRegistryEntry>,
}

#[derive(Debug)]
pub struct ModelRegistry {
    dir: PathBuf,
    /// Serializes writers; holds the persisted index.
    index: Mutex<Index>,
    handles: Mutex<HashMap<String, Arc<ModelHandle>>>,
    active: RwLock<Option<Arc<ModelHandle>>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RegistryError + '_ {
    move |source| RegistryError::Io { path: path.display().to_string(), source }
}

/// Directory name for an entry; `@` and other punctuation are replaced so
/// the name is portable.
fn entry_dir_name(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' }).collect()
}

impl ModelRegistry {
    /// Opens (or creates) a registry rooted at `dir`, reloading the active
    /// model if there is one.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, RegistryError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let index_path = dir.join(INDEX_FILE);
        let index = match std::fs::read(&index_path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map_err(|e| RegistryError::Corrupt {
                path: index_path.display().to_string(),
                message: e.to_string(),
            })?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Index::default(),
            Err(e) => return Err(io_err(&index_path)(e)),
        };
        let registry = Self {
            dir,
            index: Mutex::new(index),
            handles: Mutex::new(HashMap::new()),
            active: RwLock::new(None),
        };
        let active_id = registry.index.lock().unwrap().entries.iter().find(|e| e.active).map(|e| e.id.clone());
        if let Some(id) = active_id {
            let handle = registry.handle_for(&id)?;
            *registry.active.write().unwrap() = Some(handle);
        }
        Ok(registry)
    }

    fn bundle_dir(&self, id: &str) -> PathBuf {
        self.dir.join(entry_dir_name(id))
    }

    fn handle_for(&self, id: &str) -> Result<Arc<ModelHandle>, RegistryError> {
        if let Some(h) = self.handles.lock().unwrap().get(id) {
            return Ok(h.clone());
        }
        let bundle = ModelBundle::read_dir(self.bundle_dir(id))?;
        let handle = Arc::new(load_model(&bundle)?);
        self.handles.lock().unwrap().insert(id.to_string(), handle.clone());
        Ok(handle)
    }

    fn persist(&self, index: &Index) -> Result<(), RegistryError> {
        let path = self.dir.join(INDEX_FILE);
        let bytes = serde_json::to_vec_pretty(index).expect("index serializes");
        atomic_write(&path, &bytes).map_err(io_err(&path))
    }

    /// Validates and stores a bundle as an inactive entry. Re-uploading an
    /// identical bundle returns the existing entry unchanged.
    pub fn upload(&self, bundle: &ModelBundle) -> Result<ModelRegistryEntry, RegistryError> {
        let handle = Arc::new(load_model(bundle)?);
        let id = bundle.metadata.model_id();
        let mut index = self.index.lock().unwrap();
        if let Some(existing) = index.entries.iter().find(|e| e.id == id) {
            if existing.checksum.eq_ignore_ascii_case(&bundle.checksum) {
                return Ok(existing.clone());
            }
            return Err(RegistryError::Conflict { id });
        }
        let dir = self.bundle_dir(&id);
        bundle.write_dir(&dir)?;
        let entry = ModelRegistryEntry {
            id: id.clone(),
            metadata: bundle.metadata.clone(),
            checksum: bundle.checksum.to_ascii_lowercase(),
            active: false,
            uploaded_at: Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true),
        };
        index.entries.push(entry.clone());
        if let Err(e) = self.persist(&index) {
            index.entries.pop();
            let _ = std::fs::remove_dir_all(&dir);
            return Err(e);
        }
        self.handles.lock().unwrap().insert(id, handle);
        Ok(entry)
    }

    /// Makes `id` the only active entry.
    pub fn activate(&self, id: &str) -> Result<ModelRegistryEntry, RegistryError> {
        let mut index = self.index.lock().unwrap();
        if !index.entries.iter().any(|e| e.id == id) {
            return Err(RegistryError::NotFound(id.to_string()));
        }
        let handle = self.handle_for(id)?;
        let previous: Vec<bool> = index.entries.iter().map(|e| e.active).collect();
        for e in index.entries.iter_mut() {
            e.active = e.id == id;
        }
        if let Err(e) = self.persist(&index) {
            for (entry, was) in index.entries.iter_mut().zip(previous) {
                entry.active = was;
            }
            return Err(e);
        }
        *self.active.write().unwrap() = Some(handle);
        Ok(index.entries.iter().find(|e| e.id == id).cloned().expect("entry present"))
    }

    pub fn list(&self) -> Vec<ModelRegistryEntry> {
        self.index.lock().unwrap().entries.clone()
    }

    pub fn get(&self, id: &str) -> Result<ModelRegistryEntry, RegistryError> {
        self.index
            .lock()
            .unwrap()
            .entries
            .iter()
            .find(|e| e.id == id)
            .cloned()
            .ok_or_else(|| RegistryError::NotFound(id.to_string()))
    }

    /// The handle of the active model, if any. Callers keep the returned
    /// `Arc` for the duration of a request.
    pub fn active(&self) -> Option<Arc<ModelHandle>> {
        self.active.read().unwrap().clone()
    }

    pub fn active_entry(&self) -> Option<ModelRegistryEntry> {
        self.index.lock().unwrap().entries.iter().find(|e| e.active).cloned()
    }
}

/// Parses an upload timestamp written by the registry.
pub fn parse_uploaded_at(s: &str) -> Option<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(s).ok().map(|t| t.with_timezone(&Utc))
}
