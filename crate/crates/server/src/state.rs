use std::path::{Path, PathBuf};
use std::sync::Arc;

use wssv_core::dataset::DatasetStore;
use wssv_core::inference::Prediction;
use wssv_core::registry::ModelRegistry;
use wssv_core::reports::ReportStore;

use crate::config::ServerConfig;
use crate::error::ApiError;

/// Everything the handlers share. Cloning is cheap.
#[derive(Clone)]
pub struct AppState {
    pub inner: Arc<Inner>,
}

pub struct Inner {
    pub config: ServerConfig,
    pub dataset: DatasetStore,
    pub reports: ReportStore,
    pub registry: ModelRegistry,
    pub predictions_dir: PathBuf,
    pub overlays_dir: PathBuf,
}

impl std::ops::Deref for AppState {
    type Target = Inner;

    fn deref(&self) -> &Inner {
        &self.inner
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("cannot create {path}: {source}")]
    Dir {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dataset(#[from] wssv_core::dataset::DatasetError),
    #[error(transparent)]
    Reports(#[from] wssv_core::reports::ReportError),
    #[error(transparent)]
    Registry(#[from] wssv_core::registry::RegistryError),
}

fn ensure_dir(path: &Path) -> Result<(), StartupError> {
    std::fs::create_dir_all(path).map_err(|source| StartupError::Dir { path: path.display().to_string(), source })
}

impl AppState {
    /// Opens (or creates) every store under `config.data_dir`.
    pub fn open(config: ServerConfig) -> Result<Self, StartupError> {
        let root = config.data_dir.clone();
        let predictions_dir = root.join("predictions");
        let overlays_dir = root.join("overlays");
        ensure_dir(&predictions_dir)?;
        ensure_dir(&overlays_dir)?;
        let inner = Inner {
            dataset: DatasetStore::open(root.join("dataset"))?,
            reports: ReportStore::open(root.join("reports"))?,
            registry: ModelRegistry::open(root.join("models"))?,
            config,
            predictions_dir,
            overlays_dir,
        };
        Ok(Self { inner: Arc::new(inner) })
    }

    /// Remembers the latest prediction made for a stored sample so reports
    /// can cite it.
    pub fn record_prediction(&self, sample_id: &str, p: &Prediction) -> Result<(), ApiError> {
        let bytes = serde_json::to_vec_pretty(p).map_err(|e| ApiError::internal(e.to_string()))?;
        write_atomic(&self.predictions_dir.join(format!("{sample_id}.json")), &bytes)
    }

    pub fn recorded_prediction(&self, sample_id: &str) -> Option<Prediction> {
        let bytes = std::fs::read(self.predictions_dir.join(format!("{sample_id}.json"))).ok()?;
        serde_json::from_slice(&bytes).ok()
    }

    pub fn overlay_path(&self, overlay_id: &str) -> PathBuf {
        self.overlays_dir.join(format!("{overlay_id}.png"))
    }
}

/// Write to a sibling temp file, then rename over the target.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ApiError> {
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4().simple()));
    std::fs::write(&tmp, bytes).map_err(|e| ApiError::internal(format!("{}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        ApiError::internal(format!("{}: {e}", path.display()))
    })
}
