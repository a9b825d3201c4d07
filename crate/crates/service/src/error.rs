use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use parkwatch_core::StoreError;
use serde_json::{json, Map, Value};

/// Uniform `{error_code, message, ...}` error envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub extra: Map<String, Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            extra: Map::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extra.insert(key.to_owned(), value.into());
        self
    }

    pub fn unauthenticated() -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthenticated", "login required")
    }

    pub fn invalid_credentials() -> Self {
        Self::new(
            StatusCode::UNAUTHORIZED,
            "invalid_credentials",
            "invalid username or password",
        )
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "BadRequest", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message)
    }

    pub fn body(&self) -> Value {
        let mut body = Map::new();
        body.insert("error_code".into(), json!(self.code));
        body.insert("message".into(), json!(self.message));
        body.extend(self.extra.clone());
        Value::Object(body)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body())).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::UsernameTaken | StoreError::NoVideoRegistered(_) => StatusCode::CONFLICT,
            StoreError::InvalidUsername
            | StoreError::Policy(_)
            | StoreError::UnknownClass(_)
            | StoreError::UnknownBlock(_)
            | StoreError::InvalidRecord(_) => StatusCode::UNPROCESSABLE_ENTITY,
            StoreError::InvalidCredentials => return ApiError::invalid_credentials(),
            StoreError::SessionInvalid | StoreError::SessionExpired => return ApiError::unauthenticated(),
            StoreError::UnknownUser(_) => StatusCode::NOT_FOUND,
            StoreError::IoFailure { .. } | StoreError::CorruptStore(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let err = ApiError::new(status, e.code(), e.to_string());
        match e {
            StoreError::UnknownClass(id) => err.with("class_id", id),
            StoreError::UnknownBlock(id) | StoreError::NoVideoRegistered(id) => err.with("block_id", id),
            _ => err,
        }
    }
}
