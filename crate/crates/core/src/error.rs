use thiserror::Error;

/// Crate-wide error type. Variants carry enough context to name the file,
/// line, entry or quantity that broke a contract.
#[derive(Debug, Error)]
pub enum Error {
    #[error("density error: {0}")]
    Density(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },

    #[error("kernel error: {0}")]
    Kernel(String),

    #[error("linear solve residual {achieved:.3e} exceeds tolerance {tolerance:.3e}")]
    SolverResidual { achieved: f64, tolerance: f64 },

    #[error("prox error: {0}")]
    Prox(String),

    #[error("gamma too small for this cost scale (scaling entry {value:.3e} left [1e-150, 1e150])")]
    ScalingOutOfRange { value: f64 },

    #[error("inner loop exceeded {max_inner} iterations (violation {violation:.3e} > eps {eps:.3e})")]
    MaxInnerExceeded {
        max_inner: usize,
        violation: f64,
        eps: f64,
    },

    #[error("flow step {step} failed: {source}")]
    Flow {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
