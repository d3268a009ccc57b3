//! Residual Kaplan-Meier estimation, conditional tail summaries and the
//! Buckley-James iteration with its resampling distribution.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::Serialize;

use crate::data::OrderedDataset;
use crate::error::{Error, Result};
use crate::km::product_limit;
use crate::swls::{fit_resampled_swls, SwlsOptions};

/// Residuals `xi_i = Y_i - X_i'beta` (no intercept) with their statuses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualSet {
    pub residuals: Vec<f64>,
    pub events: Vec<bool>,
    pub beta_used: Vec<f64>,
}

impl ResidualSet {
    pub fn new(residuals: Vec<f64>, events: Vec<bool>, beta_used: Vec<f64>) -> Result<Self> {
        if residuals.len() != events.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} residuals, {} statuses",
                residuals.len(),
                events.len()
            )));
        }
        if residuals.is_empty() {
            return Err(Error::InvalidData("no residuals".into()));
        }
        if residuals.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidData("residuals must be finite".into()));
        }
        Ok(Self {
            residuals,
            events,
            beta_used,
        })
    }

    /// Residuals of `data` at `beta` on the dataset's own statuses.
    pub fn from_data(data: &OrderedDataset, beta: &[f64]) -> Result<Self> {
        check_beta(data, beta)?;
        let b = DVector::from_column_slice(beta);
        let fitted = data.covariates() * &b;
        let residuals = data
            .log_times()
            .iter()
            .zip(fitted.iter())
            .map(|(y, f)| y - f)
            .collect();
        Self::new(residuals, data.events().to_vec(), beta.to_vec())
    }
}

fn check_beta(data: &OrderedDataset, beta: &[f64]) -> Result<()> {
    if beta.len() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "beta has length {}, dataset has {} covariates",
            beta.len(),
            data.p()
        )));
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::InvalidData("beta must be finite".into()));
    }
    Ok(())
}

/// K-M distribution of residuals, sorted ascending with events first at ties.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualKm {
    pub residuals: Vec<f64>,
    pub events: Vec<bool>,
    /// `F` just after each position's tie group.
    pub cdf: Vec<f64>,
    pub jumps: Vec<f64>,
    /// `order[k]` is the input index of sorted position `k`.
    pub order: Vec<usize>,
    pub multipliers: Option<Vec<f64>>,
}

impl ResidualKm {
    /// `F(x)`, right-continuous.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let k = self.residuals.partition_point(|&r| r <= x);
        if k == 0 {
            0.0
        } else {
            self.cdf[k - 1]
        }
    }

    /// Tail atoms strictly above `anchor` with positive mass.
    fn tail(&self, anchor: f64) -> Option<(Vec<(f64, f64)>, f64)> {
        let start = self.residuals.partition_point(|&r| r <= anchor);
        let atoms: Vec<(f64, f64)> = (start..self.residuals.len())
            .filter(|&k| self.jumps[k] > 0.0)
            .map(|k| (self.residuals[k], self.jumps[k]))
            .collect();
        let mass: f64 = atoms.iter().map(|a| a.1).sum();
        (mass > 0.0).then_some((atoms, mass))
    }
}

pub fn residual_km(res: &ResidualSet) -> ResidualKm {
    km_impl(res, None)
}

/// Product-limit estimate where `z_i` multiplies both the event count and
/// the at-risk sum.
pub fn residual_km_weighted(res: &ResidualSet, z: &[f64]) -> Result<ResidualKm> {
    if z.len() != res.residuals.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} multipliers for {} residuals",
            z.len(),
            res.residuals.len()
        )));
    }
    if z.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::NonPositiveZ);
    }
    Ok(km_impl(res, Some(z)))
}

fn km_impl(res: &ResidualSet, z: Option<&[f64]>) -> ResidualKm {
    let n = res.residuals.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        res.residuals[a]
            .total_cmp(&res.residuals[b])
            .then_with(|| res.events[b].cmp(&res.events[a]))
    });
    let residuals: Vec<f64> = order.iter().map(|&i| res.residuals[i]).collect();
    let events: Vec<bool> = order.iter().map(|&i| res.events[i]).collect();
    let sorted_z: Option<Vec<f64>> = z.map(|z| order.iter().map(|&i| z[i]).collect());
    let pl = product_limit(&residuals, &events, sorted_z.as_deref());
    ResidualKm {
        residuals,
        events,
        cdf: pl.survival_after.iter().map(|s| 1.0 - s).collect(),
        jumps: pl.jumps,
        order,
        multipliers: sorted_z,
    }
}

/// Jump-weighted mean of residuals strictly above `anchor`, conditional on
/// exceeding it. `None` when no tail atom carries mass.
///
/// The conditioning mass is the tail's total jump mass, which equals
/// `1 - F(anchor)` whenever the curve reaches one.
pub fn conditional_tail_mean(km: &ResidualKm, anchor: f64) -> Option<f64> {
    let (atoms, mass) = km.tail(anchor)?;
    Some(atoms.iter().map(|(x, j)| x * j).sum::<f64>() / mass)
}

/// Smallest tail atom whose cumulative conditional mass reaches one half.
pub fn conditional_tail_median(km: &ResidualKm, anchor: f64) -> Option<f64> {
    let (atoms, mass) = km.tail(anchor)?;
    let mut cum = 0.0;
    for (x, j) in &atoms {
        cum += j / mass;
        if cum >= 0.5 - 1e-12 {
            return Some(*x);
        }
    }
    atoms.last().map(|a| a.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BjImputation {
    /// Responses with censored entries replaced, in ordered positions.
    pub responses: Vec<f64>,
    /// Censored positions left unchanged because their tail was empty.
    pub empty_tail: Vec<usize>,
}

/// Replaces each censored log time by `X_i'beta + E[xi | xi > xi_i]`.
pub fn bj_imputed_responses(data: &OrderedDataset, beta: &[f64]) -> Result<BjImputation> {
    imputed_impl(data, beta, None)
}

pub fn bj_imputed_responses_weighted(
    data: &OrderedDataset,
    beta: &[f64],
    z: &[f64],
) -> Result<BjImputation> {
    imputed_impl(data, beta, Some(z))
}

fn imputed_impl(data: &OrderedDataset, beta: &[f64], z: Option<&[f64]>) -> Result<BjImputation> {
    let res = ResidualSet::from_data(data, beta)?;
    let km = match z {
        None => residual_km(&res),
        Some(z) => residual_km_weighted(&res, z)?,
    };
    let mut responses = data.log_times().to_vec();
    let mut empty_tail = Vec::new();
    for i in (0..data.n()).filter(|&i| !data.events()[i]) {
        match conditional_tail_mean(&km, res.residuals[i]) {
            Some(mean) => responses[i] = data.log_times()[i] - res.residuals[i] + mean,
            None => empty_tail.push(i),
        }
    }
    Ok(BjImputation {
        responses,
        empty_tail,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BjTrace {
    pub beta: Vec<f64>,
    /// Iterates `beta_(1), beta_(2), ...`.
    pub trace: Vec<Vec<f64>>,
    pub converged: bool,
}

pub const DEFAULT_MAX_M: usize = 50;
pub const DEFAULT_BJ_TOL: f64 = 1e-6;

/// Least-squares map `(sum z (X - Xbar)(X - Xbar)')^{-1} sum z (X - Xbar)(Yhat - Ybar)`
/// with `z`-weighted means.
struct LeastSquaresMap {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    centered: DMatrix<f64>,
    z: Vec<f64>,
}

impl LeastSquaresMap {
    fn new(data: &OrderedDataset, z: Option<&[f64]>) -> Result<Self> {
        let n = data.n();
        let z: Vec<f64> = z.map_or_else(|| vec![1.0; n], |z| z.to_vec());
        let total: f64 = z.iter().sum();
        let x = data.covariates();
        let mut xbar = DVector::zeros(data.p());
        for i in 0..n {
            xbar += x.row(i).transpose() * z[i];
        }
        xbar /= total;
        let centered = DMatrix::from_fn(n, data.p(), |i, j| x[(i, j)] - xbar[j]);
        let mut scaled = centered.clone();
        for i in 0..n {
            scaled.row_mut(i).scale_mut(z[i]);
        }
        let gram = scaled.transpose() * &centered;
        let chol = gram.cholesky().ok_or(Error::SingularDesign)?;
        Ok(Self { chol, centered, z })
    }

    fn apply(&self, responses: &[f64]) -> DVector<f64> {
        let total: f64 = self.z.iter().sum();
        let ybar: f64 = responses.iter().zip(&self.z).map(|(y, z)| y * z).sum::<f64>() / total;
        let rhs = DVector::from_iterator(
            responses.len(),
            responses.iter().zip(&self.z).map(|(y, z)| z * (y - ybar)),
        );
        self.chol.solve(&(self.centered.transpose() * rhs))
    }
}

pub fn bj_iterate(
    data: &OrderedDataset,
    beta0: &[f64],
    max_m: usize,
    tol: f64,
) -> Result<BjTrace> {
    iterate_impl(data, beta0, max_m, tol, None)
}

/// The `z`-weighted iteration: residual K-M with multipliers and
/// `z`-weighted least squares.
pub fn bj_iterate_weighted(
    data: &OrderedDataset,
    beta0: &[f64],
    max_m: usize,
    tol: f64,
    z: &[f64],
) -> Result<BjTrace> {
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
    iterate_impl(data, beta0, max_m, tol, Some(z))
}

fn iterate_impl(
    data: &OrderedDataset,
    beta0: &[f64],
    max_m: usize,
    tol: f64,
    z: Option<&[f64]>,
) -> Result<BjTrace> {
    check_beta(data, beta0)?;
    let mut beta = beta0.to_vec();
    let mut trace = Vec::new();
    if max_m == 0 {
        return Ok(BjTrace {
            beta,
            trace,
            converged: false,
        });
    }
    let map = LeastSquaresMap::new(data, z)?;
    let mut converged = false;
    for _ in 0..max_m {
        let imputed = imputed_impl(data, &beta, z)?;
        let next: Vec<f64> = map.apply(&imputed.responses).iter().copied().collect();
        let change = next
            .iter()
            .zip(&beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = next;
        trace.push(beta.clone());
        if change < tol {
            converged = true;
            break;
        }
    }
    Ok(BjTrace {
        beta,
        trace,
        converged,
    })
}

/// Independent RNG stream `index` under `seed`.
pub fn child_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Unit exponential multipliers: positive with mean and variance one.
pub fn draw_multipliers<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| Exp1.sample(rng)).collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum MultiplierSource {
    #[default]
    Exponential,
    /// All multipliers equal to one; reproduces the non-resampled path.
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResampleOptions {
    pub multipliers: MultiplierSource,
    pub swls: SwlsOptions,
}

impl Default for ResampleOptions {
    fn default() -> Self {
        Self {
            multipliers: MultiplierSource::Exponential,
            swls: SwlsOptions::default(),
        }
    }
}

/// `n_draws x p` matrix of resampled iterates `beta*_(m)`.
///
/// Each draw starts from the tail-corrected resampled penalized fit and runs
/// `m` steps of the multiplier-weighted iteration. Draw `k` uses
/// [`child_rng`]`(seed, k)`, so results do not depend on scheduling.
pub fn bj_resample_distribution(
    data: &OrderedDataset,
    lambda2: f64,
    m: usize,
    n_draws: usize,
    seed: u64,
) -> Result<DMatrix<f64>> {
    bj_resample_distribution_with(data, lambda2, m, n_draws, seed, &ResampleOptions::default())
}

pub fn bj_resample_distribution_with(
    data: &OrderedDataset,
    lambda2: f64,
    m: usize,
    n_draws: usize,
    seed: u64,
    options: &ResampleOptions,
) -> Result<DMatrix<f64>> {
    if n_draws == 0 {
        return Err(Error::InvalidData("need at least one resampling draw".into()));
    }
    let draws: Vec<Vec<f64>> = (0..n_draws)
        .into_par_iter()
        .map(|k| {
            let z = match options.multipliers {
                MultiplierSource::Exponential => {
                    draw_multipliers(data.n(), &mut child_rng(seed, k as u64))
                }
                MultiplierSource::Ones => vec![1.0; data.n()],
            };
            let init = fit_resampled_swls(data, lambda2, true, &z, &options.swls)?;
            Ok(iterate_impl(data, &init.beta, m, 0.0, Some(&z))?.beta)
        })
        .collect::<Result<_>>()?;
    let p = data.p();
    Ok(DMatrix::from_fn(n_draws, p, |k, j| draws[k][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{order_dataset, SurvivalDataset};

    fn four_point() -> ResidualSet {
        ResidualSet::new(
            vec![-1.0, 0.0, 0.5, 2.0],
            vec![true, false, true, true],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn four_point_hand_table() {
        // S: 3/4 after -1, censored at 0, then 3/4*1/2 after 0.5, 0 after 2.
        let km = residual_km(&four_point());
        let expected = [0.25, 0.25, 0.625, 1.0];
        for (f, e) in km.cdf.iter().zip(expected) {
            assert!((f - e).abs() < 1e-15);
        }
        assert!((km.jumps[2] - 0.375).abs() < 1e-15 && (km.jumps[3] - 0.375).abs() < 1e-15);
        // Tail above -0.5: atoms 0.5 and 2 with equal mass.
        assert!((conditional_tail_mean(&km, -0.5).unwrap() - 1.25).abs() < 1e-15);
        assert_eq!(conditional_tail_median(&km, -0.5), Some(0.5));
        assert_eq!(conditional_tail_mean(&km, 2.0), None);
        assert_eq!(conditional_tail_mean(&km, 1.0), Some(2.0));
    }

    #[test]
    fn weighted_four_point_hand_table() {
        // z = (1, 2, 1, 3): risk sets 7, 6, 4, 3.
        let z = [1.0, 2.0, 1.0, 3.0];
        let km = residual_km_weighted(&four_point(), &z).unwrap();
        let s1 = 1.0 - 1.0 / 7.0;
        let s3 = s1 * (1.0 - 1.0 / 4.0);
        assert!((km.cdf[0] - (1.0 - s1)).abs() < 1e-15);
        assert!((km.cdf[2] - (1.0 - s3)).abs() < 1e-15);
        assert!((km.cdf[3] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_multipliers_match_plain() {
        let plain = residual_km(&four_point());
        for c in [1.0, 2.5] {
            let w = residual_km_weighted(&four_point(), &[c; 4]).unwrap();
            assert_eq!(w.cdf, plain.cdf);
            assert_eq!(w.jumps, plain.jumps);
        }
        assert!(matches!(
            residual_km_weighted(&four_point(), &[1.0, 0.0, 1.0, 1.0]),
            Err(Error::NonPositiveZ)
        ));
    }

    #[test]
    fn uncensored_residuals_give_empirical_cdf() {
        let res = ResidualSet::new(vec![3.0, 1.0, 2.0], vec![true; 3], vec![]).unwrap();
        let km = residual_km(&res);
        assert_eq!(km.residuals, vec![1.0, 2.0, 3.0]);
        for (f, e) in km.cdf.iter().zip([1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((f - e).abs() < 1e-15);
        }
    }

    #[test]
    fn median_tie_takes_smaller_atom() {
        let res = ResidualSet::new(vec![1.0, 2.0], vec![true, true], vec![]).unwrap();
        assert_eq!(conditional_tail_median(&residual_km(&res), 0.0), Some(1.0));
    }

    fn toy(statuses: &[u8]) -> OrderedDataset {
        let x = [0.5, 1.2, -0.3, 0.8, 2.0, -1.0, 0.1, 1.5];
        let t = [1.0, 2.5, 0.7, 3.1, 5.0, 0.4, 1.9, 6.0];
        let n = statuses.len();
        let data = SurvivalDataset::from_statuses(
            t[..n].to_vec(),
            statuses,
            DMatrix::from_row_slice(n, 1, &x[..n]),
        )
        .unwrap();
        order_dataset(&data)
    }

    #[test]
    fn uncensored_iteration_is_ols_in_one_step() {
        let data = toy(&[1; 8]);
        let trace = bj_iterate(&data, &[5.0], 10, 1e-12).unwrap();
        let again = bj_iterate(&data, &[-3.0], 1, 1e-12).unwrap();
        assert!((trace.trace[0][0] - again.beta[0]).abs() < 1e-12);
        assert!(trace.converged && trace.trace.len() == 2);
        assert!(bj_iterate(&data, &[5.0], 0, 1e-6).unwrap().beta == vec![5.0]);
    }

    #[test]
    fn imputation_never_lowers_censored_values() {
        let data = toy(&[1, 0, 1, 0, 1, 1, 0, 0]);
        let out = bj_imputed_responses(&data, &[0.3]).unwrap();
        for i in 0..data.n() {
            assert!(out.responses[i] >= data.log_times()[i]);
            if data.events()[i] {
                assert_eq!(out.responses[i], data.log_times()[i]);
            }
        }
        assert!(!out.empty_tail.is_empty());
    }

    #[test]
    fn singular_design_is_reported() {
        let data = order_dataset(
            &SurvivalDataset::from_statuses(
                vec![1.0, 2.0, 3.0],
                &[1, 1, 1],
                DMatrix::from_element(3, 1, 2.0),
            )
            .unwrap(),
        );
        assert!(matches!(
            bj_iterate(&data, &[0.0], 3, 1e-6),
            Err(Error::SingularDesign)
        ));
    }

    #[test]
    fn resampling_is_reproducible() {
        let data = toy(&[1, 0, 1, 1, 1, 1, 0, 0]);
        let a = bj_resample_distribution(&data, 0.0, 3, 8, 42).unwrap();
        let b = bj_resample_distribution(&data, 0.0, 3, 8, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.nrows(), 8);
    }
}
