use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;
use wssv_core::dataset::DatasetError;
use wssv_core::explain::ExplainError;
use wssv_core::imaging::ImagingError;
use wssv_core::inference::InferenceError;
use wssv_core::registry::RegistryError;
use wssv_core::reports::ReportError;

/// Structured API error. Serialized as
/// `{"error": {"kind": ..., "message": ..., "field": ...}}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub kind: &'static str,
    pub message: String,
    pub field: Option<String>,
}

#[derive(Serialize)]
struct Body<'a> {
    error: Inner<'a>,
}

#[derive(Serialize)]
struct Inner<'a> {
    kind: &'a str,
    message: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
}

impl ApiError {
    pub fn new(status: StatusCode, kind: &'static str, message: impl Into<String>) -> Self {
        Self { status, kind, message: message.into(), field: None }
    }

    pub fn validation(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self { field: Some(field.into()), ..Self::new(StatusCode::BAD_REQUEST, "validation", message) }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn no_active_model() -> Self {
        Self::conflict("no active model; upload a bundle with POST /api/v1/models and activate it with POST /api/v1/models/{id}/activate")
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Body {
            error: Inner { kind: self.kind, message: &self.message, field: self.field.as_deref() },
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<ImagingError> for ApiError {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::Decode { .. } => ApiError::validation("image", e.to_string()),
            ImagingError::Validation { field, .. } => ApiError::validation(field, e.to_string()),
            other => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "imaging", other.to_string()),
        }
    }
}

impl From<InferenceError> for ApiError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Busy => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "busy", e.to_string()),
            InferenceError::Integrity { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "integrity", e.to_string()),
            InferenceError::Capability { .. } => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "capability", e.to_string()),
            InferenceError::Configuration(_) | InferenceError::Format(_) | InferenceError::ModelContract(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "bundle", e.to_string())
            }
            InferenceError::Input(_) | InferenceError::BatchItem { .. } => {
                ApiError::new(StatusCode::BAD_REQUEST, "input", e.to_string())
            }
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<ExplainError> for ApiError {
    fn from(e: ExplainError) -> Self {
        match e {
            ExplainError::Inference(inner) => inner.into(),
            ExplainError::Config(m) => ApiError::validation("saliency", m),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<DatasetError> for ApiError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Decode(_) => ApiError::validation("image", e.to_string()),
            DatasetError::NotFound(_) => ApiError::not_found(e.to_string()),
            DatasetError::Validation { ref field, .. } => ApiError::validation(field.clone(), e.to_string()),
            DatasetError::Leakage { .. } => ApiError::validation("split", e.to_string()),
            DatasetError::Conflict(_) => ApiError::conflict(e.to_string()),
            DatasetError::Integrity { .. } | DatasetError::Archive(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "archive", e.to_string())
            }
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<ReportError> for ApiError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::Validation { ref field, .. } => ApiError::validation(field.clone(), e.to_string()),
            ReportError::UnknownImage(_) => ApiError {
                field: Some("image_ids".into()),
                ..ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "reference", e.to_string())
            },
            ReportError::NotFound(_) => ApiError::not_found(e.to_string()),
            ReportError::Conflict(_) => ApiError::conflict(e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<RegistryError> for ApiError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::NotFound(_) => ApiError::not_found(e.to_string()),
            RegistryError::Conflict { .. } => ApiError::conflict(e.to_string()),
            RegistryError::Bundle(inner) => inner.into(),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<tokio::task::JoinError> for ApiError {
    fn from(e: tokio::task::JoinError) -> Self {
        ApiError::internal(format!("worker failed: {e}"))
    }
}
