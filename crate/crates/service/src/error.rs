use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use tegraph::counterfactual::CounterfactualError;
use tegraph::ingest::IngestError;
use tegraph::model::ModelError;
use tegraph::pipeline::PipelineError;
use thiserror::Error;

use crate::SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown checkpoint {0:?}")]
    UnknownCheckpoint(String),
    #[error("invalid edit: {0}")]
    InvalidEdit(String),
    #[error("edit stack is empty")]
    EmptyStack,
    #[error("invalid procedure: {0}")]
    InvalidProcedure(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::UnknownSession(_) | ServiceError::UnknownCheckpoint(_) => {
                StatusCode::NOT_FOUND
            }
            ServiceError::InvalidEdit(_)
            | ServiceError::EmptyStack
            | ServiceError::InvalidProcedure(_)
            | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Mismatch(_) => StatusCode::CONFLICT,
            ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    /// Stable machine-readable code carried in the error body.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownSession(_) => "unknown_session",
            ServiceError::UnknownCheckpoint(_) => "unknown_checkpoint",
            ServiceError::InvalidEdit(_) => "invalid_edit",
            ServiceError::EmptyStack => "empty_stack",
            ServiceError::InvalidProcedure(_) => "invalid_procedure",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::Mismatch(_) => "mismatch",
            ServiceError::Internal(_) => "internal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: u32,
    pub error: ErrorDetail,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            schema_version: SCHEMA_VERSION,
            error: ErrorDetail {
                code: self.code().into(),
                message: self.to_string(),
            },
        };
        (self.status(), Json(body)).into_response()
    }
}

impl From<ModelError> for ServiceError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::DimensionMismatch { .. } | ModelError::SchemaVersion { .. } => {
                ServiceError::Mismatch(e.to_string())
            }
            ModelError::TooShort => ServiceError::InvalidProcedure(e.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<CounterfactualError> for ServiceError {
    fn from(e: CounterfactualError) -> Self {
        match e {
            CounterfactualError::InvalidEdit(_) | CounterfactualError::UnusableClass(_) => {
                ServiceError::InvalidEdit(e.to_string())
            }
            CounterfactualError::EmptySourceClass(_) => ServiceError::BadRequest(e.to_string()),
            CounterfactualError::Model(m) => m.into(),
            CounterfactualError::Unreachable(_) => ServiceError::Internal(e.to_string()),
        }
    }
}

impl From<IngestError> for ServiceError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::SchemaVersion { .. } => ServiceError::Mismatch(e.to_string()),
            other => ServiceError::InvalidProcedure(other.to_string()),
        }
    }
}

impl From<PipelineError> for ServiceError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Model(m) => m.into(),
            PipelineError::Graph(g) => ServiceError::InvalidProcedure(g.to_string()),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}
