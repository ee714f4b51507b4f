//! ONNX model bundles and sigmoid-scored binary predictions.
//!
//! A bundle on disk is a directory holding `model.onnx`, `metadata.json`
//! and `model.onnx.sha256`. [`load_model`] checks the checksum, rejects
//! operators the runtime cannot execute, and verifies the declared input and
//! output shapes before compiling the graph for CPU execution.

mod bundle;
mod engine;
mod metadata;

pub use bundle::{ModelBundle, CHECKSUM_FILE, METADATA_FILE, MODEL_FILE};
pub use engine::{
    load_model, predict, predict_batch, sigmoid, Decision, ModelHandle, Prediction, ReservedHandle, Scorer,
};
pub use metadata::{ModelMetadata, OutputKind, TrainingProvenance};
pub(crate) use metadata::default_class_map as metadata_default_class_map;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("integrity error: model checksum {actual} does not match declared {expected}")]
    Integrity { expected: String, actual: String },
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("capability error: operator `{op}` is not supported by the runtime")]
    Capability { op: String },
    #[error("malformed model: {0}")]
    Format(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("input {index}: {source}")]
    BatchItem {
        index: usize,
        #[source]
        source: Box<InferenceError>,
    },
    #[error("model contract error: {0}")]
    ModelContract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("model handle is reserved by a running benchmark")]
    Busy,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}
