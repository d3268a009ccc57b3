//! Accelerated failure time regression for right-censored data when the
//! largest observations are censored.

pub mod bj;
pub mod cli;
pub mod data;
pub mod error;
pub mod impute;
pub mod km;
pub mod qp;
pub mod simulate;
pub mod swls;

pub use data::{order_dataset, OrderedDataset, SurvivalDataset};
pub use error::{Error, Result};
pub use km::{km_estimate, stute_weights, KmCurve, StuteWeights};
pub use qp::{solve_qp, QpProblem, QpSolution};
pub use swls::{
    default_ridge, fit_penalized_swls, fit_penalized_swls_with, fit_resampled_swls, AftFit,
    ConstraintRows, SwlsOptions,
};
