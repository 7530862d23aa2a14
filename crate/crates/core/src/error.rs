use std::io;

use thiserror::Error;

/// Errors produced by the engine.
///
/// Variants are grouped by the subsystem that raises them. The service layer
/// maps each variant onto one stable wire code, so adding a variant here means
/// adding a code there too.
#[derive(Debug, Error)]
pub enum Error {
    // volume I/O
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported datatype: {0}")]
    UnsupportedDatatype(String),
    #[error("truncated data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("slice index {index} out of range for axis of length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("window must be positive, got {0}")]
    NonPositiveWindow(f64),
    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),

    // annotation model
    #[error("prompt at ({row}, {col}) outside {rows}x{cols} slice")]
    OutOfBounds {
        row: i64,
        col: i64,
        rows: usize,
        cols: usize,
    },
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("run lengths sum to {sum}, expected {expected}")]
    RunSumMismatch { sum: u64, expected: u64 },
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("nothing to redo")]
    NothingToRedo,
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown volume {0}")]
    UnknownVolume(String),
    #[error("label must be in 1..=65535, got {0}")]
    InvalidLabel(u32),

    // predictors
    #[error("predictor id {0} already registered")]
    DuplicatePredictorId(String),
    #[error("unknown predictor {0}")]
    UnknownPredictor(String),
    #[error("invalid predictor descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("unsupported prompt: {0}")]
    UnsupportedPrompt(String),
    #[error("embedding computation failed: {0}")]
    ComputeFailed(String),
    #[error("embedding cache I/O: {0}")]
    CacheIo(String),
    #[error("bridge unavailable: {0}")]
    BridgeUnavailable(String),
    #[error("bridge protocol error: {0}")]
    Protocol(String),
    #[error("predictor {0} does not support sequence propagation")]
    SequenceUnsupported(String),
    #[error("sequence has no prompted slices")]
    NoPromptedSlices,
    #[error("a run is already streaming on this sequence")]
    SequenceBusy,

    // native predictor
    #[error("no positive seed points")]
    NoPositiveSeeds,

    // orchestration
    #[error("session has no conditional slices")]
    NoConditionalSlices,
    #[error("slice {0} has no prompts")]
    FromSliceNotConditional(usize),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("session {0} already has an active job")]
    SessionBusy(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
