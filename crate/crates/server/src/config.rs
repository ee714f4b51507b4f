use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use wssv_core::explain::OcclusionConfig;

pub const ENV_LISTEN: &str = "WSSV_LISTEN";
pub const ENV_DATA_DIR: &str = "WSSV_DATA_DIR";
pub const ENV_THRESHOLD: &str = "WSSV_THRESHOLD";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid `{field}`: {message}")]
    Value { field: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServerConfig {
    /// Socket address to bind, e.g. `127.0.0.1:8080`.
    pub listen: String,
    /// Root for the dataset store, reports, overlays and model registry.
    pub data_dir: PathBuf,
    /// Overrides the active model's decision threshold when set.
    pub threshold: Option<f64>,
    pub saliency: OcclusionConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("wssv-data"),
            threshold: None,
            saliency: OcclusionConfig::default(),
        }
    }
}

impl ServerConfig {
    /// Reads an optional TOML file, then applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|source| ConfigError::Read { path: p.display().to_string(), source })?;
                toml::from_str(&text)
                    .map_err(|e| ConfigError::Parse { path: p.display().to_string(), message: e.to_string() })?
            }
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok())?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies overrides from `lookup` (the process environment in
    /// [`load`](Self::load)).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup(ENV_LISTEN) {
            self.listen = v;
        }
        if let Some(v) = lookup(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(v);
        }
        if let Some(v) = lookup(ENV_THRESHOLD) {
            let t = v
                .trim()
                .parse::<f64>()
                .map_err(|e| ConfigError::Value { field: "threshold", message: e.to_string() })?;
            self.threshold = Some(t);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t < 1.0) {
                return Err(ConfigError::Value { field: "threshold", message: format!("{t} must lie in (0, 1)") });
            }
        }
        if self.listen.parse::<std::net::SocketAddr>().is_err() {
            return Err(ConfigError::Value { field: "listen", message: format!("`{}` is not a socket address", self.listen) });
        }
        if self.saliency.stride == 0 || self.saliency.stride > self.saliency.patch_side {
            return Err(ConfigError::Value { field: "saliency", message: "stride must lie in [1, patch_side]".into() });
        }
        Ok(())
    }
}
