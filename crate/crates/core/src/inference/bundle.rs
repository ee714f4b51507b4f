use std::path::Path;

use sha2::{Digest, Sha256};

use super::{InferenceError, ModelMetadata};

pub const MODEL_FILE: &str = "model.onnx";
pub const METADATA_FILE: &str = "metadata.json";
/// `sha256sum`-style line: `<hex>  model.onnx`.
pub const CHECKSUM_FILE: &str = "model.onnx.sha256";

/// Serialized network plus the metadata needed to feed and read it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub metadata: ModelMetadata,
    pub model_blob: Vec<u8>,
    /// Lowercase SHA-256 hex of `model_blob`.
    pub checksum: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> InferenceError + '_ {
    move |source| InferenceError::Io { path: path.display().to_string(), source }
}

impl ModelBundle {
    /// Builds a bundle whose checksum is computed from `model_blob`.
    pub fn new(metadata: ModelMetadata, model_blob: Vec<u8>) -> Self {
        let checksum = Self::checksum_of(&model_blob);
        Self { metadata, model_blob, checksum }
    }

    pub fn checksum_of(blob: &[u8]) -> String {
        hex::encode(Sha256::digest(blob))
    }

    pub fn checksum_matches(&self) -> bool {
        Self::checksum_of(&self.model_blob).eq_ignore_ascii_case(self.checksum.trim())
    }

    pub fn read_dir(dir: impl AsRef<Path>) -> Result<Self, InferenceError> {
        let dir = dir.as_ref();
        let meta_path = dir.join(METADATA_FILE);
        let meta_bytes = std::fs::read(&meta_path).map_err(io_err(&meta_path))?;
        let metadata = Self::parse_metadata(&meta_bytes)?;
        let model_path = dir.join(MODEL_FILE);
        let model_blob = std::fs::read(&model_path).map_err(io_err(&model_path))?;
        let sum_path = dir.join(CHECKSUM_FILE);
        let sum_text = std::fs::read_to_string(&sum_path).map_err(io_err(&sum_path))?;
        let checksum = Self::parse_checksum_line(&sum_text)?;
        Ok(Self { metadata, model_blob, checksum })
    }

    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<(), InferenceError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let meta = serde_json::to_vec_pretty(&self.metadata)
            .map_err(|e| InferenceError::Configuration(e.to_string()))?;
        let writes = [
            (dir.join(METADATA_FILE), meta),
            (dir.join(MODEL_FILE), self.model_blob.clone()),
            (dir.join(CHECKSUM_FILE), format!("{}  {MODEL_FILE}\n", self.checksum).into_bytes()),
        ];
        for (path, bytes) in writes {
            crate::fsutil::atomic_write(&path, &bytes).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn parse_metadata(bytes: &[u8]) -> Result<ModelMetadata, InferenceError> {
        serde_json::from_slice(bytes)
            .map_err(|e| InferenceError::Configuration(format!("metadata.json: {e}")))
    }

    pub fn parse_checksum_line(text: &str) -> Result<String, InferenceError> {
        let hex = text.split_whitespace().next().unwrap_or_default();
        if hex.len() != 64 || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(InferenceError::Configuration(format!(
                "{CHECKSUM_FILE} does not start with a SHA-256 hex digest"
            )));
        }
        Ok(hex.to_ascii_lowercase())
    }
}
