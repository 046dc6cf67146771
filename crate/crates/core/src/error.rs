use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {context} (component {component})")]
    Numerical { context: String, component: usize },

    #[error("stop condition not reached before t_max = {t_max} s")]
    HorizonExceeded { t_max: f64 },

    #[error("prediction policy failed to null the barrier rate within {t_max} s")]
    PolicyFailure { t_max: f64 },

    #[error("state outside the model domain: {0}")]
    Domain(String),

    #[error("alpha-dot coupling matrix is singular (condition number {condition:.3e})")]
    SingularMassMatrix { condition: f64 },

    #[error("trim did not converge after {iterations} iterations (residual {residual:.3e})")]
    TrimNotConverged { iterations: usize, residual: f64 },

    #[error("trim input {input:?} lies outside the input bounds")]
    TrimOutOfBounds { input: Vec<f64> },

    #[error("barrier gradient vanishes ({0})")]
    ZeroGradient(String),

    #[error("opposed barriers {0:?} are simultaneously active")]
    MultipleActive(Vec<usize>),

    #[error("input dimension {0} is not supported (m <= 3)")]
    UnsupportedDimension(usize),

    #[error("quadratic program is infeasible: {0}")]
    Infeasible(String),

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

/// Returns the first non-finite component of `values`, if any.
pub(crate) fn check_finite(values: &[f64], context: &str) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(component) => Err(Error::Numerical { context: context.to_string(), component }),
        None => Ok(()),
    }
}
