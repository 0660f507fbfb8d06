use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use gridgame::environment::{EnvError, ValidationError};
use serde_json::json;
use thiserror::Error;

use crate::SCHEMA_VERSION;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown case `{0}`")]
    UnknownCase(String),
    #[error("unknown chronic `{0}`")]
    UnknownChronic(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("session finished: {0}")]
    SessionFinished(String),
    #[error(transparent)]
    Validation(#[from] ValidationError),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl ApiError {
    pub fn code(&self) -> &'static str {
        match self {
            ApiError::UnknownCase(_) => "unknown_case",
            ApiError::UnknownChronic(_) => "unknown_chronic",
            ApiError::BadConfig(_) => "bad_config",
            ApiError::UnknownSession(_) => "unknown_session",
            ApiError::SessionFinished(_) => "session_finished",
            ApiError::Validation(v) => v.code(),
            ApiError::BadRequest(_) => "bad_request",
            ApiError::Internal(_) => "internal",
        }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ApiError::UnknownCase(_) | ApiError::UnknownChronic(_) | ApiError::UnknownSession(_) => StatusCode::NOT_FOUND,
            ApiError::BadConfig(_) | ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::SessionFinished(_) => StatusCode::CONFLICT,
            ApiError::Validation(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl From<EnvError> for ApiError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Validation(v) => ApiError::Validation(v),
            EnvError::EpisodeFinished => ApiError::SessionFinished("game over, reset to continue".into()),
            EnvError::BadConfig(m) => ApiError::BadConfig(m),
            EnvError::Grid(g) => ApiError::BadConfig(g.to_string()),
            other => ApiError::Internal(other.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        // Validation errors carry their fields so a client can point at
        // the offending control.
        let detail = match &self {
            ApiError::Validation(v) => serde_json::to_value(v).unwrap_or_default(),
            _ => serde_json::Value::Null,
        };
        let body = json!({
            "schema_version": SCHEMA_VERSION,
            "error": { "code": self.code(), "message": self.to_string(), "detail": detail },
        });
        (self.status(), Json(body)).into_response()
    }
}
