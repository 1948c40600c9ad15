use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("no frames in {0}")]
    NoFrames(PathBuf),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what}: expected {expected} frames, found {found}")]
    FrameCount {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("bad flow magic in {0}")]
    BadFlowMagic(PathBuf),

    #[error("non-finite flow value in {0}")]
    NonFiniteFlow(PathBuf),

    #[error("empty proposal")]
    EmptyProposal,

    #[error("empty superpixel {0}")]
    EmptySuperpixel(usize),

    #[error("confidence out of range: {0}")]
    ConfidenceOutOfRange(f64),

    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },

    #[error("degenerate training set: {0}")]
    DegenerateTrainingSet(&'static str),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Tags the error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit status: 1 for configuration errors, 3 for numerical
    /// non-convergence, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::InvalidConfig(_) => 1,
            Error::NotConverged { .. } => 3,
            _ => 2,
        }
    }

    /// True when the root cause is numerical non-convergence.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotConverged { .. } => true,
            Error::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
