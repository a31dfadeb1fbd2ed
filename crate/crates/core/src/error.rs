use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: String,
        expected: String,
        found: String,
    },

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite entry in {0}")]
    NonFinite(String),

    #[error("uncertain parameter {delta:?} lies outside the declared box")]
    OutsideBox { delta: Vec<f64> },

    #[error("no equilibrium satisfies the constraints: {0}")]
    Infeasible(String),

    #[error("optimizer is not unique: {0}")]
    Nonunique(String),

    #[error("active-set oracle refuses {0} inequality constraints (limit 12)")]
    TooManyInequalities(usize),

    #[error("pair (A, B) is not stabilizable")]
    NotStabilizable,

    #[error("Riccati solve failed: {0}")]
    Riccati(String),

    #[error("condition checker disagrees with direct PBH test: {0}")]
    Disagreement(String),

    #[error("invalid model: {0}")]
    Invalid(String),

    #[error("Newton iteration failed: {0}")]
    Newton(String),

    #[error("scenario error at `{key}`: {msg}")]
    Scenario { key: String, msg: String },
}

impl Error {
    pub(crate) fn dim(context: impl Into<String>, expected: impl ToString, found: impl ToString) -> Self {
        Error::Dimension {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    pub(crate) fn scenario(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Scenario {
            key: key.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
