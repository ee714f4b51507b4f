//! Domain failures and their single-line machine-readable rendering.

use std::fmt;
use std::path::Path;

use serde::Serialize;
use wssv_core::dataset::DatasetError;
use wssv_core::eval::EvalError;
use wssv_core::explain::ExplainError;
use wssv_core::imaging::ImagingError;
use wssv_core::inference::InferenceError;
use wssv_core::qa::QaError;

/// A failed command. `kind` is a stable token scripts can switch on.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new("input", message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    /// `{"error":"<kind>","message":"..."}` — always one line.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            message: &'a str,
        }
        serde_json::to_string(&Line { error: self.kind, message: &self.message })
            .expect("string fields always serialize")
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl From<ImagingError> for Failure {
    fn from(e: ImagingError) -> Self {
        let kind = match e {
            ImagingError::Decode { .. } | ImagingError::Encode(_) => "decode",
            ImagingError::Leakage { .. } => "leakage",
            ImagingError::Config(_) => "config",
            _ => "input",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<InferenceError> for Failure {
    fn from(e: InferenceError) -> Self {
        let kind = match e {
            InferenceError::Integrity { .. } => "integrity",
            InferenceError::Capability { .. } => "capability",
            InferenceError::Configuration(_) | InferenceError::Format(_) | InferenceError::ModelContract(_) => "bundle",
            InferenceError::Input(_) | InferenceError::BatchItem { .. } => "input",
            InferenceError::Busy => "busy",
            InferenceError::Io { .. } => "io",
            _ => "runtime",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ExplainError> for Failure {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Inference(inner) => inner.into(),
            ExplainError::Config(_) => Self::new("config", e.to_string()),
            ExplainError::Input(_) => Self::input(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        fn kind_of(e: &EvalError) -> &'static str {
            match e {
                EvalError::Stratification { .. } => "stratification",
                EvalError::UndefinedMetric(_) => "undefined_metric",
                EvalError::Fold { source, .. } => kind_of(source),
                _ => "input",
            }
        }
        Self::new(kind_of(&e), e.to_string())
    }
}

impl From<QaError> for Failure {
    fn from(e: QaError) -> Self {
        match e {
            QaError::Inference(inner) | QaError::BenchmarkAborted { source: inner, .. } => inner.into(),
            QaError::Gate(_) => Self::new("config", e.to_string()),
            _ => Self::input(e.to_string()),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Self {
        let kind = match e {
            DatasetError::Decode(_) => "decode",
            DatasetError::NotFound(_) => "not_found",
            DatasetError::Validation { .. } => "validation",
            DatasetError::Leakage { .. } => "leakage",
            DatasetError::Conflict(_) => "conflict",
            DatasetError::Integrity { .. } => "integrity",
            DatasetError::Archive(_) => "archive",
            _ => "io",
        };
        Self::new(kind, e.to_string())
    }
}

impl From<wssv_server::ServeError> for Failure {
    fn from(e: wssv_server::ServeError) -> Self {
        Self::new("serve", e.to_string())
    }
}

impl From<wssv_server::ConfigError> for Failure {
    fn from(e: wssv_server::ConfigError) -> Self {
        Self::new("config", e.to_string())
    }
}
