use std::path::PathBuf;

/// Errors produced anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing bundle file {0}")]
    MissingFile(PathBuf),
    #[error("parse error in {file} line {line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("node index {index} out of range for graph with {n} nodes")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("row count mismatch: {what} has {got} rows, expected {expected}")]
    RowMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("empty graph")]
    EmptyGraph,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class {0} has no nodes")]
    EmptyClass(usize),
    #[error("node {0} has an empty coupling support")]
    EmptySupport(usize),
    #[error("dynamics spec of kind {got} cannot evaluate {wanted}")]
    WrongDynamics { got: &'static str, wanted: &'static str },
    #[error("non-finite state at step {step}")]
    NonFinite { step: usize },
    #[error("evaluation budget of {max_nfe} function evaluations exceeded at t = {t}")]
    MaxNfeExceeded { max_nfe: usize, t: f64 },
    #[error("step size underflow ({h:e}) at t = {t}")]
    StepUnderflow { h: f64, t: f64 },
    #[error("empty mask")]
    EmptyMask,
    #[error("tape is incomplete: {0}")]
    IncompleteTape(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("degenerate decay window: {0}")]
    DegenerateWindow(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
