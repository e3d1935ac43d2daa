use thiserror::Error;

/// Errors reported by the hierarchical-vector toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix with {rows} rows cannot be triangularized into {cols} columns")]
    TooFewRows { rows: usize, cols: usize },

    #[error("matrix is not isometric (deviation {deviation:.3e})")]
    NotIsometric { deviation: f64 },

    #[error("basis is not flagged isometric")]
    BasisNotIsometric,

    #[error("rank-deficient matrix at cluster {cluster}")]
    RankDeficient { cluster: usize },

    #[error("nestedness residual {residual:.3e} too large at cluster {cluster}")]
    NotNested { cluster: usize, residual: f64 },

    #[error("empty point set")]
    EmptyPointSet,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("cluster {cluster}: {reason}")]
    Subtree { cluster: usize, reason: &'static str },

    #[error("operands use different {0}")]
    Mismatch(&'static str),

    #[error("dense problem of dimension {n} exceeds the limit {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
