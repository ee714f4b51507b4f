//! Content-addressed image dataset with labels, splits, a relabeling audit
//! trail and manifest export/import.
//!
//! Layout under the store root:
//!
//! ```text
//! records.json             sample records + audit trail, replaced atomically
//! blobs/ab/abcd….png       encoded image bytes, named by SHA-256 of the bytes
//! ```
//!
//! Mutations take the single writer lock, build the new state on a copy and
//! publish it only after `records.json` has been replaced, so a failed
//! operation leaves both memory and disk untouched and readers never observe
//! a partial write.

mod archive;
mod store;

pub use archive::{
    build_archive, read_archive, DatasetManifest, ExportBundle, LabelCounts, MANIFEST_SCHEMA_VERSION,
};
pub use store::{
    AuditEntry, DatasetStore, NewSample, SampleFilter, SplitPlan, RECORDS_FILE,
};

use thiserror::Error;

use crate::imaging::ImagingError;
use crate::Split;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("undecodable image: {0}")]
    Decode(#[source] ImagingError),
    #[error("sample `{0}` not found")]
    NotFound(String),
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("augmented sample `{id}` cannot be placed in the {split} split")]
    Leakage { id: String, split: Split },
    #[error("conflicting record for sample `{0}`")]
    Conflict(String),
    #[error("blob for `{id}` does not hash to its id")]
    Integrity { id: String },
    #[error("archive error: {0}")]
    Archive(String),
    #[error("storage error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store file {path}: {message}")]
    Corrupt { path: String, message: String },
}

impl DatasetError {
    pub(crate) fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        DatasetError::Validation { field: field.into(), message: message.into() }
    }

    pub(crate) fn io(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
        move |source| DatasetError::Io { path: path.display().to_string(), source }
    }
}
