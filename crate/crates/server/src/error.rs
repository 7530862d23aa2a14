use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

use volprompt::Error;

/// Error envelope returned by every route: `{"code": ..., "message": ...}`
/// with the matching HTTP status.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            code: code.to_string(),
            message: message.into(),
            status: status.as_u16(),
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "INVALID_REQUEST", message)
    }
}

/// Status and stable code for each engine error.
pub fn classify(e: &Error) -> (StatusCode, &'static str) {
    use StatusCode as S;
    match e {
        Error::MalformedHeader(_) => (S::BAD_REQUEST, "MALFORMED_HEADER"),
        Error::UnsupportedDatatype(_) => (S::UNSUPPORTED_MEDIA_TYPE, "UNSUPPORTED_DATATYPE"),
        Error::TruncatedData { .. } => (S::BAD_REQUEST, "TRUNCATED_DATA"),
        Error::IndexOutOfRange { .. } => (S::NOT_FOUND, "OUT_OF_BOUNDS"),
        Error::NonPositiveWindow(_) => (S::BAD_REQUEST, "INVALID_WINDOW"),
        Error::DimsMismatch(_) => (S::BAD_REQUEST, "DIMS_MISMATCH"),
        Error::OutOfBounds { .. } => (S::UNPROCESSABLE_ENTITY, "PROMPT_OUT_OF_BOUNDS"),
        Error::InvalidPrompt(_) => (S::UNPROCESSABLE_ENTITY, "INVALID_PROMPT"),
        Error::RunSumMismatch { .. } => (S::BAD_REQUEST, "RLE_MISMATCH"),
        Error::NothingToUndo => (S::CONFLICT, "NOTHING_TO_UNDO"),
        Error::NothingToRedo => (S::CONFLICT, "NOTHING_TO_REDO"),
        Error::UnknownSession(_) => (S::NOT_FOUND, "UNKNOWN_SESSION"),
        Error::UnknownVolume(_) => (S::NOT_FOUND, "UNKNOWN_VOLUME"),
        Error::InvalidLabel(_) => (S::BAD_REQUEST, "INVALID_LABEL"),
        Error::DuplicatePredictorId(_) => (S::CONFLICT, "DUPLICATE_PREDICTOR"),
        Error::UnknownPredictor(_) => (S::NOT_FOUND, "UNKNOWN_PREDICTOR"),
        Error::InvalidDescriptor(_) => (S::BAD_GATEWAY, "INVALID_DESCRIPTOR"),
        Error::UnsupportedPrompt(_) => (S::UNPROCESSABLE_ENTITY, "UNSUPPORTED_PROMPT"),
        Error::ComputeFailed(_) => (S::BAD_GATEWAY, "COMPUTE_FAILED"),
        Error::CacheIo(_) => (S::INTERNAL_SERVER_ERROR, "CACHE_IO"),
        Error::BridgeUnavailable(_) => (S::SERVICE_UNAVAILABLE, "BRIDGE_UNAVAILABLE"),
        Error::Protocol(_) => (S::BAD_GATEWAY, "BRIDGE_PROTOCOL"),
        Error::SequenceUnsupported(_) => (S::UNPROCESSABLE_ENTITY, "SEQUENCE_UNSUPPORTED"),
        Error::NoPromptedSlices => (S::UNPROCESSABLE_ENTITY, "NO_PROMPTED_SLICES"),
        Error::SequenceBusy => (S::CONFLICT, "SEQUENCE_BUSY"),
        Error::NoPositiveSeeds => (S::UNPROCESSABLE_ENTITY, "NO_POSITIVE_SEEDS"),
        Error::NoConditionalSlices => (S::UNPROCESSABLE_ENTITY, "NO_CONDITIONAL_SLICES"),
        Error::FromSliceNotConditional(_) => (S::UNPROCESSABLE_ENTITY, "FROM_SLICE_NOT_CONDITIONAL"),
        Error::UnknownJob(_) => (S::NOT_FOUND, "UNKNOWN_JOB"),
        Error::SessionBusy(_) => (S::CONFLICT, "SESSION_BUSY"),
        Error::InvalidRequest(_) => (S::BAD_REQUEST, "INVALID_REQUEST"),
        Error::Io(_) => (S::INTERNAL_SERVER_ERROR, "IO"),
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = classify(&e);
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            log::error!("{}: {}", self.code, self.message);
        }
        (status, Json(self)).into_response()
    }
}
