use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

/// Wire form of every error response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("project {0} not found")]
    ProjectNotFound(String),
    #[error("ticket {0} not found")]
    TicketNotFound(String),
    #[error("project is training")]
    Busy,
    #[error("no unlabeled sentences remain")]
    PoolExhausted,
    #[error("{message}")]
    Invalid { code: &'static str, message: String, detail: Value },
    #[error("{message}")]
    Conflict { code: &'static str, message: String, detail: Value },
    #[error("storage error: {0}")]
    Storage(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub fn invalid(code: &'static str, message: impl Into<String>, detail: Value) -> Self {
        Self::Invalid { code, message: message.into(), detail }
    }

    pub fn conflict(code: &'static str, message: impl Into<String>, detail: Value) -> Self {
        Self::Conflict { code, message: message.into(), detail }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::ProjectNotFound(_) | ServiceError::TicketNotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Busy | ServiceError::PoolExhausted | ServiceError::Conflict { .. } => StatusCode::CONFLICT,
            ServiceError::Invalid { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Storage(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let (code, detail) = match self {
            ServiceError::ProjectNotFound(id) => ("project_not_found", serde_json::json!({ "project_id": id })),
            ServiceError::TicketNotFound(id) => ("ticket_not_found", serde_json::json!({ "ticket_id": id })),
            ServiceError::Busy => ("busy", Value::Null),
            ServiceError::PoolExhausted => ("pool_exhausted", Value::Null),
            ServiceError::Invalid { code, detail, .. } | ServiceError::Conflict { code, detail, .. } => (*code, detail.clone()),
            ServiceError::Storage(_) => ("storage", Value::Null),
            ServiceError::Internal(_) => ("internal", Value::Null),
        };
        ErrorBody { code: code.to_owned(), message: self.to_string(), detail }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Storage(e.to_string())
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
