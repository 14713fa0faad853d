use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use eglass_core::Error as CoreError;
use serde::{Deserialize, Serialize};

/// Error payload returned with every non-2xx response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        match &e {
            CoreError::Collapse { index, .. } => Self::new(
                StatusCode::CONFLICT,
                "collapse",
                format!("{e}; try a lower K (e.g. K-1) or a smaller k_top (collapsed at index {index})"),
            ),
            CoreError::Divergence { .. } => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "divergence", e.to_string()),
            CoreError::InvalidSpec(_) | CoreError::DimensionMismatch { .. } | CoreError::SizeCap { .. } | CoreError::Json(_) => {
                Self::bad_request(e.to_string())
            }
            CoreError::NonFinite(_) | CoreError::NonConvergence { .. } | CoreError::Io(_) => Self::internal(e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            code: self.code.to_string(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

pub type ApiResult<T> = Result<T, ApiError>;
