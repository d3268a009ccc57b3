//! Ridge-penalized Stute weighted least squares with right-censoring
//! constraints, solved as a quadratic program.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::OrderedDataset;
use crate::error::{Error, Result};
use crate::km::{stute_weights, StuteWeights};
use crate::qp::{solve_qp, QpProblem, DEFAULT_TOL};

/// How censored observations enter the constraint rows `A b >= b0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintRows {
    /// Rows carry the same `sqrt(w_i)` scaling as the objective. Censored
    /// observations have zero K-M weight, so these rows are vacuous and are
    /// dropped.
    #[default]
    Weighted,
    /// Rows use the unscaled centered values `X_i - Xbar_w >= Y_i - Ybar_w`,
    /// so every censored fitted value must reach its censoring time.
    Unweighted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwlsOptions {
    pub constraint_rows: ConstraintRows,
    pub qp_tol: f64,
    /// `None` uses `50 * (p + m)`.
    pub max_iter: Option<usize>,
}

impl Default for SwlsOptions {
    fn default() -> Self {
        Self {
            constraint_rows: ConstraintRows::Weighted,
            qp_tol: DEFAULT_TOL,
            max_iter: None,
        }
    }
}

/// Weighted-centered design split into uncensored and censored blocks.
#[derive(Debug, Clone)]
pub struct WeightedDesign {
    pub xw_uncensored: DMatrix<f64>,
    pub yw_uncensored: DVector<f64>,
    pub xw_censored: DMatrix<f64>,
    pub yw_censored: DVector<f64>,
    pub uncensored_positions: Vec<usize>,
    pub censored_positions: Vec<usize>,
    pub xbar_w: DVector<f64>,
    pub ybar_w: f64,
    pub weights: StuteWeights,
    pub constraint_rows: ConstraintRows,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSummary {
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Ordered positions of censored observations whose constraint is tight.
    pub active_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AftFit {
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub lambda2: f64,
    pub qp: QpSummary,
    pub n_active_censoring_constraints: usize,
}

impl AftFit {
    pub fn beta_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.beta)
    }
}

/// `0.01 * sqrt(2 ln p)`.
pub fn default_ridge(p: usize) -> f64 {
    assert!(p >= 1, "ridge default needs at least one covariate");
    0.01 * (2.0 * (p as f64).ln()).sqrt()
}

pub fn weighted_center(data: &OrderedDataset, weights: &StuteWeights) -> Result<WeightedDesign> {
    weighted_center_with(data, weights, ConstraintRows::Weighted)
}

pub fn weighted_center_with(
    data: &OrderedDataset,
    weights: &StuteWeights,
    rows: ConstraintRows,
) -> Result<WeightedDesign> {
    let n = data.n();
    let p = data.p();
    if weights.weights.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} weights for {} observations",
            weights.weights.len(),
            n
        )));
    }
    let total = weights.total();
    if total <= 0.0 {
        return Err(Error::AllWeightsZero);
    }
    let x = data.covariates();
    let y = data.log_times();
    let w = &weights.weights;

    let mut xbar_w = DVector::zeros(p);
    let mut ybar_w = 0.0;
    for i in 0..n {
        if w[i] > 0.0 {
            xbar_w += x.row(i).transpose() * w[i];
            ybar_w += w[i] * y[i];
        }
    }
    xbar_w /= total;
    ybar_w /= total;

    let (uncensored_positions, censored_positions): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| weights.events[i]);

    let centered_row = |i: usize, scale: f64| -> (Vec<f64>, f64) {
        let row = (0..p).map(|j| scale * (x[(i, j)] - xbar_w[j])).collect();
        (row, scale * (y[i] - ybar_w))
    };
    let block = |positions: &[usize], scaled: bool| -> (DMatrix<f64>, DVector<f64>) {
        let mut xs = DMatrix::zeros(positions.len(), p);
        let mut ys = DVector::zeros(positions.len());
        for (r, &i) in positions.iter().enumerate() {
            let scale = if scaled { w[i].sqrt() } else { 1.0 };
            let (row, yy) = centered_row(i, scale);
            for j in 0..p {
                xs[(r, j)] = row[j];
            }
            ys[r] = yy;
        }
        (xs, ys)
    };
    let (xw_uncensored, yw_uncensored) = block(&uncensored_positions, true);
    let (xw_censored, yw_censored) =
        block(&censored_positions, rows == ConstraintRows::Weighted);

    Ok(WeightedDesign {
        xw_uncensored,
        yw_uncensored,
        xw_censored,
        yw_censored,
        uncensored_positions,
        censored_positions,
        xbar_w,
        ybar_w,
        weights: weights.clone(),
        constraint_rows: rows,
    })
}

/// Assembles `D = Xu'Xu + lambda2 I`, `d = Xu'Yu`, `A = Xc`, `b0 = Yc`.
pub fn build_qp(design: &WeightedDesign, lambda2: f64) -> Result<QpProblem> {
    build_qp_impl(design, lambda2, None).map(|(qp, _)| qp)
}

/// Like [`build_qp`], also returning the ordered position behind each
/// constraint row. Rows that are identically zero with `b0 <= 0` hold for
/// every `b` and are dropped.
fn build_qp_impl(
    design: &WeightedDesign,
    lambda2: f64,
    multipliers: Option<&[f64]>,
) -> Result<(QpProblem, Vec<usize>)> {
    if !(lambda2 >= 0.0 && lambda2.is_finite()) {
        return Err(Error::InvalidData(format!(
            "ridge penalty must be finite and nonnegative, got {lambda2}"
        )));
    }
    let p = design.xbar_w.len();
    let xu = &design.xw_uncensored;
    let yu = &design.yw_uncensored;
    let (dmat, d) = match multipliers {
        None => (xu.transpose() * xu, xu.transpose() * yu),
        Some(z) => {
            let mut scaled = xu.clone();
            for (r, &i) in design.uncensored_positions.iter().enumerate() {
                scaled.row_mut(r).scale_mut(z[i]);
            }
            (scaled.transpose() * xu, scaled.transpose() * yu)
        }
    };
    let dmat = dmat + DMatrix::identity(p, p) * lambda2;
    if lambda2 == 0.0 && dmat.clone().cholesky().is_none() {
        return Err(Error::RankDeficient);
    }

    let mut kept = Vec::new();
    for (r, &pos) in design.censored_positions.iter().enumerate() {
        let row_is_zero = design.xw_censored.row(r).iter().all(|v| *v == 0.0);
        if row_is_zero && design.yw_censored[r] <= 0.0 {
            continue;
        }
        kept.push((r, pos));
    }
    let a = DMatrix::from_fn(kept.len(), p, |k, j| design.xw_censored[(kept[k].0, j)]);
    let b0 = DVector::from_iterator(kept.len(), kept.iter().map(|&(r, _)| design.yw_censored[r]));
    let positions = kept.into_iter().map(|(_, pos)| pos).collect();
    Ok((QpProblem::new(d, dmat, a, b0)?, positions))
}

pub fn fit_penalized_swls(
    data: &OrderedDataset,
    lambda2: f64,
    tail_correction: bool,
) -> Result<AftFit> {
    fit_penalized_swls_with(data, lambda2, tail_correction, &SwlsOptions::default())
}

pub fn fit_penalized_swls_with(
    data: &OrderedDataset,
    lambda2: f64,
    tail_correction: bool,
    options: &SwlsOptions,
) -> Result<AftFit> {
    fit_impl(data, lambda2, tail_correction, None, options)
}

/// Penalized fit with per-observation multipliers `z` on the objective.
///
/// Censoring rows are left unscaled: for `z_i > 0` the scaled and unscaled
/// inequalities describe the same feasible set.
pub fn fit_resampled_swls(
    data: &OrderedDataset,
    lambda2: f64,
    tail_correction: bool,
    z: &[f64],
    options: &SwlsOptions,
) -> Result<AftFit> {
    if z.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} multipliers for {} observations",
            z.len(),
            data.n()
        )));
    }
    if z.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::NonPositiveZ);
    }
    fit_impl(data, lambda2, tail_correction, Some(z), options)
}

fn fit_impl(
    data: &OrderedDataset,
    lambda2: f64,
    tail_correction: bool,
    z: Option<&[f64]>,
    options: &SwlsOptions,
) -> Result<AftFit> {
    if data.p() == 0 {
        return Err(Error::InvalidData("model needs at least one covariate".into()));
    }
    let weights = stute_weights(data, tail_correction);
    if !weights.events.iter().any(|e| *e) {
        return Err(Error::NoUncensored);
    }
    let design = weighted_center_with(data, &weights, options.constraint_rows)?;
    let (problem, positions) = build_qp_impl(&design, lambda2, z)?;
    let max_iter = options.max_iter.unwrap_or_else(|| problem.default_max_iter());
    let solution = solve_qp(&problem, options.qp_tol, max_iter)?;
    let beta = solution.b.clone();
    let intercept = design.ybar_w - design.xbar_w.dot(&beta);
    let active_positions: Vec<usize> =
        solution.active_set.iter().map(|&k| positions[k]).collect();
    Ok(AftFit {
        beta: beta.iter().copied().collect(),
        intercept,
        lambda2,
        n_active_censoring_constraints: active_positions.len(),
        qp: QpSummary {
            iterations: solution.iterations,
            kkt_residual: solution.kkt_residual,
            active_positions,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{order_dataset, SurvivalDataset};

    fn ordered(times: &[f64], statuses: &[u8], x: &[f64], p: usize) -> OrderedDataset {
        let n = times.len();
        let data = SurvivalDataset::from_statuses(
            times.to_vec(),
            statuses,
            DMatrix::from_row_slice(n, p, x),
        )
        .unwrap();
        order_dataset(&data)
    }

    #[test]
    fn ridge_default_values() {
        assert_eq!(default_ridge(1), 0.0);
        assert!((default_ridge(5) - 0.017_941).abs() < 5e-7);
        assert!((default_ridge(10) - 0.021_460).abs() < 5e-7);
    }

    #[test]
    fn equal_weights_reduce_to_column_centering() {
        let data = ordered(&[1.0, 2.0, 3.0], &[1, 1, 1], &[1.0, 4.0, 7.0], 1);
        let design = weighted_center(&data, &stute_weights(&data, false)).unwrap();
        assert!((design.xbar_w[0] - 4.0).abs() < 1e-12);
        let s = (1.0f64 / 3.0).sqrt();
        assert!((design.xw_uncensored[(0, 0)] + 3.0 * s).abs() < 1e-12);
        assert_eq!(design.xw_censored.nrows(), 0);
    }

    #[test]
    fn single_uncensored_row_centers_to_zero() {
        let data = ordered(&[1.0, 2.0], &[1, 0], &[3.0, 5.0], 1);
        let design = weighted_center(&data, &stute_weights(&data, false)).unwrap();
        assert_eq!(design.xw_uncensored[(0, 0)], 0.0);
        assert_eq!(design.yw_uncensored[0], 0.0);
    }

    #[test]
    fn all_zero_weights_error() {
        let data = ordered(&[1.0, 2.0], &[0, 0], &[3.0, 5.0], 1);
        assert!(matches!(
            weighted_center(&data, &stute_weights(&data, false)),
            Err(Error::AllWeightsZero)
        ));
        assert!(matches!(
            fit_penalized_swls(&data, 0.0, false),
            Err(Error::NoUncensored)
        ));
    }

    #[test]
    fn weighted_rows_are_vacuous_for_censored() {
        let data = ordered(
            &[1.0, 2.0, 3.0, 4.0, 5.0],
            &[1, 0, 1, 0, 1],
            &[0.1, 0.5, 0.2, 0.9, 0.3],
            1,
        );
        let design = weighted_center(&data, &stute_weights(&data, true)).unwrap();
        assert_eq!(build_qp(&design, 0.1).unwrap().m(), 0);
        let unweighted =
            weighted_center_with(&data, &stute_weights(&data, true), ConstraintRows::Unweighted)
                .unwrap();
        assert_eq!(build_qp(&unweighted, 0.1).unwrap().m(), 2);
    }

    #[test]
    fn orthonormal_design_gives_identity() {
        // Two events with equal weights 1/2 and centered rows (+-1, 0), (0, +-1)
        // scaled by sqrt(1/2)... build one directly instead.
        let design = WeightedDesign {
            xw_uncensored: DMatrix::identity(2, 2),
            yw_uncensored: DVector::from_row_slice(&[1.0, 2.0]),
            xw_censored: DMatrix::zeros(0, 2),
            yw_censored: DVector::zeros(0),
            uncensored_positions: vec![0, 1],
            censored_positions: vec![],
            xbar_w: DVector::zeros(2),
            ybar_w: 0.0,
            weights: StuteWeights {
                weights: vec![0.5, 0.5],
                tail_corrected: false,
                events: vec![true, true],
            },
            constraint_rows: ConstraintRows::Weighted,
        };
        let qp = build_qp(&design, 0.0).unwrap();
        assert_eq!(qp.dmat, DMatrix::identity(2, 2));
        assert_eq!(qp.m(), 0);
    }

    #[test]
    fn rank_deficient_without_ridge() {
        let data = ordered(&[1.0, 2.0, 3.0], &[1, 1, 1], &[1.0, 1.0, 1.0], 1);
        assert!(matches!(
            fit_penalized_swls(&data, 0.0, false),
            Err(Error::RankDeficient)
        ));
        assert!(fit_penalized_swls(&data, 0.01, false).is_ok());
    }

    #[test]
    fn resampled_rejects_bad_multipliers() {
        let data = ordered(&[1.0, 2.0, 3.0], &[1, 1, 1], &[1.0, 2.0, 4.0], 1);
        let opts = SwlsOptions::default();
        assert!(matches!(
            fit_resampled_swls(&data, 0.0, false, &[1.0, 0.0, 1.0], &opts),
            Err(Error::NonPositiveZ)
        ));
        assert!(fit_resampled_swls(&data, 0.0, false, &[1.0, 1.0], &opts).is_err());
    }
}
