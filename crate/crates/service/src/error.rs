use std::path::Path;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Unprocessable(String),
    #[error(transparent)]
    Core(#[from] fsl_core::Error),
    #[error("{0}")]
    Internal(String),
}

#[derive(Serialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl ServiceError {
    pub(crate) fn storage(path: &Path, e: std::io::Error) -> Self {
        ServiceError::Internal(format!("{}: {e}", path.display()))
    }

    pub(crate) fn internal(e: impl std::fmt::Display) -> Self {
        ServiceError::Internal(e.to_string())
    }

    pub fn code(&self) -> String {
        match self {
            ServiceError::BadRequest(_) => "bad_request".into(),
            ServiceError::NotFound(_) => "not_found".into(),
            ServiceError::Conflict(_) => "conflict".into(),
            ServiceError::Unprocessable(_) => "unprocessable".into(),
            ServiceError::Core(e) => e.code().into(),
            ServiceError::Internal(_) => "internal".into(),
        }
    }

    pub fn status(&self) -> StatusCode {
        use fsl_core::Error as E;
        match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ServiceError::Core(E::UnknownImage(_)) => StatusCode::NOT_FOUND,
            ServiceError::Core(E::UnknownPathology(_) | E::Config(_) | E::InvalidArgument(_)) => StatusCode::BAD_REQUEST,
            ServiceError::Core(E::Empty(_) | E::UnsatisfiableTriplet { .. } | E::NotAFailure { .. }) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Core(_) | ServiceError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    pub fn body(&self) -> ErrorBody {
        ErrorBody { code: self.code(), message: self.to_string() }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        (self.status(), Json(self.body())).into_response()
    }
}
