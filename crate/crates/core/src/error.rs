use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the workflow.
///
/// Variants are grouped so the command-line front end can map them onto
/// process exit codes (configuration, I/O, numeric).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular observation point")]
    SingularPoint,

    #[error("degenerate field map")]
    DegenerateMap,

    #[error("degenerate normalization")]
    DegenerateNormalization,

    #[error("degenerate pattern")]
    DegeneratePattern,

    #[error("Nyquist violation: sample spacing ({dx:.4e} m, {dy:.4e} m) exceeds half wavelength {half_lambda:.4e} m")]
    NyquistViolation { dx: f64, dy: f64, half_lambda: f64 },

    #[error("non-finite value in {layer}")]
    NonFinite { layer: String },

    #[error("training diverged at epoch {epoch}")]
    Diverged {
        epoch: usize,
        history: Box<crate::neuralnet::LossHistory>,
    },

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("unsupported bundle version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: malformed manifest: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// The innermost error, with stage labels stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}
