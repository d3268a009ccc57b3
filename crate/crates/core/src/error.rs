use thiserror::Error;

use crate::qp::QpSolution;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("quadratic term is not positive definite")]
    NotPositiveDefinite,

    #[error("constraints are infeasible")]
    Infeasible,

    #[error("QP iteration limit reached after {} iterations", .best.iterations)]
    IterationLimit { best: Box<QpSolution> },

    #[error("all Kaplan-Meier weights are zero")]
    AllWeightsZero,

    #[error("uncensored design is rank deficient and no ridge penalty was given")]
    RankDeficient,

    #[error("no uncensored observations")]
    NoUncensored,

    #[error("resampling multipliers must be finite and strictly positive")]
    NonPositiveZ,

    #[error("centered design matrix is singular")]
    SingularDesign,

    #[error("censored observation at position {position} has no survival mass beyond it")]
    NoTailMass { position: usize },

    #[error("need at least 2 censored observations below the maximum, found {found}")]
    TooFewCensored { found: usize },

    #[error("all censored times used in the difference regression are equal")]
    DegenerateRegression,

    #[error("largest observation is not censored")]
    LargestNotCensored,

    #[error("no censored observations tied at the maximum time")]
    NoTailTies,

    #[error("Kaplan-Meier curve has {points} support points, need at least 2")]
    DegenerateCurve { points: usize },

    #[error("method needs at least {needed} covariates, dataset has {found}")]
    TooFewCovariates { needed: usize, found: usize },

    #[error("censoring calibration failed: {0}")]
    CalibrationFailed(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
