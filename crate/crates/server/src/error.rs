//! API error codes and their HTTP statuses.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use denial_core::dialogue::DialogueError;
use denial_core::storage::StorageError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Validation,
    NotFound,
    Conflict,
    SessionBusy,
    SessionClosed,
    Upstream,
    Internal,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 7] = [
        ErrorCode::Validation,
        ErrorCode::NotFound,
        ErrorCode::Conflict,
        ErrorCode::SessionBusy,
        ErrorCode::SessionClosed,
        ErrorCode::Upstream,
        ErrorCode::Internal,
    ];

    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::Validation => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::Conflict | ErrorCode::SessionBusy => StatusCode::CONFLICT,
            ErrorCode::SessionClosed => StatusCode::GONE,
            ErrorCode::Upstream => StatusCode::BAD_GATEWAY,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default)]
    pub retryable: bool,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            retryable: false,
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Validation, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

impl std::error::Error for ApiError {}

impl From<DialogueError> for ApiError {
    fn from(err: DialogueError) -> Self {
        let retryable = err.is_retryable();
        let code = match &err {
            DialogueError::Validation(_) => ErrorCode::Validation,
            DialogueError::NotFound { .. } => ErrorCode::NotFound,
            DialogueError::SessionClosed(_) => ErrorCode::SessionClosed,
            DialogueError::SessionBusy(_) => ErrorCode::SessionBusy,
            DialogueError::Upstream(_) => ErrorCode::Upstream,
            DialogueError::Prompt(_) => ErrorCode::Internal,
        };
        Self {
            code,
            message: err.to_string(),
            retryable,
        }
    }
}

impl From<StorageError> for ApiError {
    fn from(err: StorageError) -> Self {
        let code = match &err {
            StorageError::NotFound { .. } => ErrorCode::NotFound,
            StorageError::Conflict(_) => ErrorCode::Conflict,
            StorageError::Validation(_) => ErrorCode::Validation,
            StorageError::Migration { .. }
            | StorageError::Corrupt { .. }
            | StorageError::Io { .. } => ErrorCode::Internal,
        };
        Self::new(code, err.to_string())
    }
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: &'a ApiError,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.code == ErrorCode::Internal {
            tracing::error!(message = %self.message, "internal error");
        }
        (self.code.status(), Json(ErrorBody { error: &self })).into_response()
    }
}
