use thiserror::Error;

use crate::model::Finding;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix `{0}` is not symmetric positive definite")]
    NotSpd(&'static str),

    #[error("matrix `{name}` is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { name: &'static str, asymmetry: f64 },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("functional has zero prior variance")]
    ZeroPriorVariance,

    #[error("numerical consistency failure: {0}")]
    Numerical(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("finite-population analysis requested but group `{0}` has an infinite population")]
    InfinitePopulation(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("invalid model: {}", summarize(.0))]
    InvalidModel(Vec<Finding>),

    #[error("no observed data for group `{0}`")]
    MissingData(String),

    #[error("joint dimension {dim} exceeds cap {cap}")]
    CapExceeded { dim: usize, cap: usize },

    #[error("shortcut not applicable: {0}")]
    NotApplicable(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error in {field}: {message}")]
    Parse { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn summarize(findings: &[Finding]) -> String {
    findings
        .iter()
        .map(|f| f.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn parse(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by malformed or invalid user input, as opposed
    /// to numerical failures inside a computation.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Numerical(_))
    }
}
