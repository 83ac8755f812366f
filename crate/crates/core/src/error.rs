use thiserror::Error;

/// Errors raised while validating problems or running the solver pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("infeasible k: k = {k} exceeds the {p} candidates of image {image}")]
    InfeasibleK { k: usize, p: usize, image: usize },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("infeasible assignment: {rows} rows cannot cover {cols} columns")]
    InfeasibleAssignment { rows: usize, cols: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("instance too large for exhaustive search: {0} labelings")]
    InstanceTooLarge(f64),

    #[error("k = {0} is too small for affine factorization (need at least 4)")]
    TooFewFeatures(usize),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
