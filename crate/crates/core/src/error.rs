use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("configuration error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("no measurable turbulence: angle-of-arrival deviation is zero")]
    NoTurbulence,
    #[error("geometry mismatch: {0}")]
    Geometry(String),
    #[error("metric evaluation returned a non-finite value at iteration {iteration}")]
    NonFiniteMetric { iteration: u64 },
    #[error("no stable parameters: every autotune trial stayed at or below the open-loop mean")]
    NoStableParameters,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config {
            line: None,
            message: message.into(),
        }
    }

    /// True for errors the CLI reports with the configuration exit code.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. } | Error::Geometry(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
