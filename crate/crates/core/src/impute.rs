//! Estimation pipelines for a censored largest observation, mean imputation
//! of censored times, and imputation of censored ties at the maximum.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bj::{
    bj_resample_distribution_with, child_rng, conditional_tail_mean, conditional_tail_median,
    draw_multipliers, residual_km, residual_km_weighted, MultiplierSource, ResampleOptions,
    ResidualKm, ResidualSet,
};
use crate::data::OrderedDataset;
use crate::error::{Error, Result};
use crate::km::{km_estimate, position_jumps};
use crate::swls::{fit_penalized_swls_with, AftFit, SwlsOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputationMethod {
    Efron,
    #[serde(rename = "cmean")]
    CondMean,
    #[serde(rename = "cmedian")]
    CondMedian,
    #[serde(rename = "rmean")]
    ResampCondMean,
    #[serde(rename = "rmedian")]
    ResampCondMedian,
    #[serde(rename = "pdiff")]
    PredDiff,
}

impl ImputationMethod {
    pub const ALL: [ImputationMethod; 6] = [
        Self::Efron,
        Self::CondMean,
        Self::CondMedian,
        Self::ResampCondMean,
        Self::ResampCondMedian,
        Self::PredDiff,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Efron => "efron",
            Self::CondMean => "cmean",
            Self::CondMedian => "cmedian",
            Self::ResampCondMean => "rmean",
            Self::ResampCondMedian => "rmedian",
            Self::PredDiff => "pdiff",
        }
    }

    /// Short label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            Self::Efron => "W0",
            Self::CondMean => "W_tau_m",
            Self::CondMedian => "W_tau_md",
            Self::ResampCondMean => "W_tau*_m",
            Self::ResampCondMedian => "W_tau*_md",
            Self::PredDiff => "W_nu",
        }
    }

    pub fn min_covariates(self) -> usize {
        match self {
            Self::ResampCondMean | Self::ResampCondMedian => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for ImputationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ImputationMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s || m.label() == s)
            .ok_or_else(|| {
                format!("unknown method '{s}', expected efron|cmean|cmedian|rmean|rmedian|pdiff")
            })
    }
}

/// Scale on which mean imputation and the difference regression work.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeScale {
    #[default]
    Log,
    Original,
}

impl TimeScale {
    fn value(self, data: &OrderedDataset, i: usize) -> f64 {
        match self {
            Self::Log => data.log_times()[i],
            Self::Original => data.times()[i],
        }
    }

    /// Log time of `reference + shift` on this scale.
    fn shifted_log(self, reference_log: f64, shift: f64) -> f64 {
        match self {
            Self::Log => reference_log + shift,
            Self::Original => (reference_log.exp() + shift).ln(),
        }
    }
}

impl FromStr for TimeScale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "log" => Ok(Self::Log),
            "original" => Ok(Self::Original),
            _ => Err(format!("unknown scale '{s}', expected log|original")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    /// No residual mass above the anchor; nothing was added.
    EmptyTail,
    /// The predicted difference was not positive and was set to zero.
    ClampedNu,
    /// An extrapolated lifetime fell below the censoring time.
    BelowCensoringTime,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub swls: SwlsOptions,
    /// Resampling draws behind the resampled point estimate.
    pub n_draws: usize,
    /// Iteration steps per resampling draw.
    pub m: usize,
    /// Multiplier draws averaged into the resampled tail quantity.
    pub tau_draws: usize,
    pub seed: u64,
    pub diff_scale: TimeScale,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            swls: SwlsOptions::default(),
            n_draws: 100,
            m: 3,
            tau_draws: 100,
            seed: 0,
            diff_scale: TimeScale::Log,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImputationResult {
    pub method: ImputationMethod,
    pub censored_log_time: f64,
    pub imputed_log_time: Option<f64>,
    /// Quantity added to the largest observation (log scale, or the
    /// difference regression's scale for `pdiff`).
    pub tau: Option<f64>,
    pub fit: AftFit,
    pub flags: Vec<Flag>,
}

impl ImputationResult {
    pub fn imputed_time(&self) -> Option<f64> {
        self.imputed_log_time.map(f64::exp)
    }
}

/// Mean-imputed times for censored observations below the maximum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanImputedTimes {
    pub scale: TimeScale,
    /// Ordered positions of the imputed observations.
    pub positions: Vec<usize>,
    pub censored: Vec<f64>,
    pub imputed: Vec<f64>,
}

/// Replaces each censored time `C_i` below the maximum by
/// `S(C_i)^{-1} sum_{t_r > C_i} t_r dS(t_r)` under the tail-corrected K-M curve.
///
/// Censored observations tied at the maximum are skipped: no mass lies
/// beyond them.
pub fn mean_impute_all(data: &OrderedDataset, scale: TimeScale) -> Result<MeanImputedTimes> {
    let pl = position_jumps(data, true);
    let times = data.times();
    let tmax = data.max_time();
    let mut out = MeanImputedTimes {
        scale,
        positions: Vec::new(),
        censored: Vec::new(),
        imputed: Vec::new(),
    };
    for i in (0..data.n()).filter(|&i| !data.events()[i] && times[i] < tmax) {
        let surv = pl.survival_after[i];
        if surv <= 0.0 {
            return Err(Error::NoTailMass { position: i });
        }
        let start = times.partition_point(|&t| t <= times[i]);
        let sum: f64 = (start..data.n()).map(|k| scale.value(data, k) * pl.jumps[k]).sum();
        out.positions.push(i);
        out.censored.push(scale.value(data, i));
        out.imputed.push(sum / surv);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffRegression {
    pub scale: TimeScale,
    pub intercept: f64,
    pub slope: f64,
    pub x: Vec<f64>,
    pub diffs: Vec<f64>,
    pub weights: Vec<f64>,
    /// Largest observed time on the regression scale.
    pub reference: f64,
    pub raw_prediction: f64,
    pub nu: f64,
    pub clamped: bool,
}

/// Weighted least-squares line `y = a + b x`.
fn weighted_line(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let total: f64 = w.iter().sum();
    let xbar = x.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() / total;
    let ybar = y.iter().zip(w).map(|(y, w)| y * w).sum::<f64>() / total;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for i in 0..x.len() {
        sxx += w[i] * (x[i] - xbar) * (x[i] - xbar);
        sxy += w[i] * (x[i] - xbar) * (y[i] - ybar);
    }
    if x.iter().all(|v| *v == x[0]) || sxx <= 0.0 {
        return Err(Error::DegenerateRegression);
    }
    let slope = sxy / sxx;
    Ok((ybar - slope * xbar, slope))
}

fn diff_line(
    x: Vec<f64>,
    diffs: Vec<f64>,
    reference: f64,
    weight_reference: f64,
    scale: TimeScale,
) -> Result<DiffRegression> {
    let weights: Vec<f64> = x.iter().map(|xi| 1.0 / (weight_reference - xi)).collect();
    let (intercept, slope) = weighted_line(&x, &diffs, &weights)?;
    let raw_prediction = intercept + slope * reference;
    let clamped = raw_prediction <= 0.0;
    Ok(DiffRegression {
        scale,
        intercept,
        slope,
        x,
        diffs,
        weights,
        reference,
        raw_prediction,
        nu: raw_prediction.max(0.0),
        clamped,
    })
}

/// Weighted regression of `Y^m - Y` on `Y` over censored observations below
/// the maximum, with weights `1 / (Y_max - Y_i)`, evaluated at `Y_max`.
pub fn predicted_difference(data: &OrderedDataset, scale: TimeScale) -> Result<DiffRegression> {
    let mean = mean_impute_all(data, scale)?;
    if mean.positions.len() < 2 {
        return Err(Error::TooFewCensored {
            found: mean.positions.len(),
        });
    }
    let reference = scale.value(data, data.n() - 1);
    let diffs = mean.imputed.iter().zip(&mean.censored).map(|(m, c)| m - c).collect();
    diff_line(mean.censored, diffs, reference, reference, scale)
}

pub fn run_pipeline(
    data: &OrderedDataset,
    method: ImputationMethod,
    lambda2: f64,
    options: &PipelineOptions,
) -> Result<ImputationResult> {
    let n = data.n();
    let censored_log_time = data.log_times()[n - 1];
    if method != ImputationMethod::Efron && !data.last_is_censored() {
        return Err(Error::LargestNotCensored);
    }
    if data.p() < method.min_covariates() {
        return Err(Error::TooFewCovariates {
            needed: method.min_covariates(),
            found: data.p(),
        });
    }
    let refit = |tau: f64| fit_penalized_swls_with(
        &data.with_imputed_last(censored_log_time + tau),
        lambda2,
        true,
        &options.swls,
    );
    let mut flags = Vec::new();
    let tau = match method {
        ImputationMethod::Efron => {
            let fit = fit_penalized_swls_with(data, lambda2, true, &options.swls)?;
            return Ok(ImputationResult {
                method,
                censored_log_time,
                imputed_log_time: None,
                tau: None,
                fit,
                flags,
            });
        }
        ImputationMethod::CondMean | ImputationMethod::CondMedian => {
            let w0 = fit_penalized_swls_with(data, lambda2, true, &options.swls)?;
            let res = ResidualSet::from_data(data, &w0.beta)?;
            let anchor = res.residuals[n - 1];
            match tail_location(method, &residual_km(&res), anchor) {
                Some(loc) => loc - anchor,
                None => {
                    flags.push(Flag::EmptyTail);
                    0.0
                }
            }
        }
        ImputationMethod::ResampCondMean | ImputationMethod::ResampCondMedian => {
            let resample = ResampleOptions {
                multipliers: MultiplierSource::Exponential,
                swls: options.swls.clone(),
            };
            let draws = bj_resample_distribution_with(
                data,
                lambda2,
                options.m,
                options.n_draws,
                options.seed,
                &resample,
            )?;
            let beta: Vec<f64> = draws.column_iter().map(|c| c.mean()).collect();
            let res = ResidualSet::from_data(data, &beta)?;
            let anchor = res.residuals[n - 1];
            // Streams after the resampling draws keep the two uses independent.
            let mut excess = Vec::with_capacity(options.tau_draws);
            for b in 0..options.tau_draws {
                let stream = (options.n_draws + b) as u64;
                let z = draw_multipliers(n, &mut child_rng(options.seed, stream));
                let km = residual_km_weighted(&res, &z)?;
                if let Some(loc) = tail_location(method, &km, anchor) {
                    excess.push(loc - anchor);
                }
            }
            if excess.is_empty() {
                flags.push(Flag::EmptyTail);
                0.0
            } else {
                excess.iter().sum::<f64>() / excess.len() as f64
            }
        }
        ImputationMethod::PredDiff => {
            let reg = predicted_difference(data, options.diff_scale)?;
            if reg.clamped {
                flags.push(Flag::ClampedNu);
            }
            options.diff_scale.shifted_log(censored_log_time, reg.nu) - censored_log_time
        }
    };
    let fit = refit(tau)?;
    let reported_tau = match method {
        ImputationMethod::PredDiff if options.diff_scale == TimeScale::Original => {
            (censored_log_time + tau).exp() - data.max_time()
        }
        _ => tau,
    };
    Ok(ImputationResult {
        method,
        censored_log_time,
        imputed_log_time: Some(censored_log_time + tau),
        tau: Some(reported_tau),
        fit,
        flags,
    })
}

fn tail_location(method: ImputationMethod, km: &ResidualKm, anchor: f64) -> Option<f64> {
    match method {
        ImputationMethod::CondMedian | ImputationMethod::ResampCondMedian => {
            conditional_tail_median(km, anchor)
        }
        _ => conditional_tail_mean(km, anchor),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailTieImputation {
    pub scale: TimeScale,
    pub censoring_time: f64,
    /// Imputed lifetimes in original time units, in processing order.
    pub times: Vec<f64>,
    pub nus: Vec<f64>,
    pub flags: Vec<Flag>,
}

fn tie_count(data: &OrderedDataset) -> Result<usize> {
    match data.tied_censored_max().len() {
        0 => Err(Error::NoTailTies),
        m => Ok(m),
    }
}

pub fn tail_ties_iterative(data: &OrderedDataset) -> Result<TailTieImputation> {
    tail_ties_iterative_with(data, TimeScale::Original)
}

/// Imputes the censored observations tied at the maximum one at a time.
///
/// Each pass refits the difference line with the earlier imputations added
/// as points `(Y_max, nu_j)`, weighting by the distance to the latest
/// imputed value so the added points stay finite.
pub fn tail_ties_iterative_with(
    data: &OrderedDataset,
    scale: TimeScale,
) -> Result<TailTieImputation> {
    let m = tie_count(data)?;
    let base = predicted_difference(data, scale)?;
    let reference = base.reference;
    let mut nus: Vec<f64> = Vec::with_capacity(m);
    let mut flags = Vec::new();
    for k in 0..m {
        let nu = if k == 0 {
            if base.clamped {
                flags.push(Flag::ClampedNu);
            }
            base.nu
        } else if nus[k - 1] <= 0.0 {
            0.0
        } else {
            let mut x = base.x.clone();
            let mut y = base.diffs.clone();
            x.extend(std::iter::repeat_n(reference, k));
            y.extend_from_slice(&nus);
            let line = diff_line(x, y, reference, reference + nus[k - 1], scale)?;
            if line.clamped && !flags.contains(&Flag::ClampedNu) {
                flags.push(Flag::ClampedNu);
            }
            line.nu
        };
        nus.push(nu);
    }
    let censoring_log = data.log_times()[data.n() - 1];
    let times = nus
        .iter()
        .map(|nu| scale.shifted_log(censoring_log, *nu).exp())
        .collect();
    Ok(TailTieImputation {
        scale,
        censoring_time: data.max_time(),
        times,
        nus,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extrapolation {
    pub psi: f64,
    pub censoring_time: f64,
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
    /// Last defined survival value below the maximum.
    pub s_last: f64,
    pub probabilities: Vec<f64>,
    /// Imputed lifetimes in original time units.
    pub times: Vec<f64>,
    /// Indices into `times` that fall below the censoring time.
    pub below_censoring: Vec<usize>,
}

/// Extends the trend of lifetimes against `S(t)^psi` over the K-M support
/// to the evenly spaced grid `S_last (1 - k/m)`, `k = 1..m`.
pub fn tail_ties_extrapolate(data: &OrderedDataset, psi: f64) -> Result<Extrapolation> {
    if !(psi.is_finite() && psi > 0.0) {
        return Err(Error::InvalidData(format!("psi must be positive, got {psi}")));
    }
    let m = tie_count(data)?;
    let curve = km_estimate(data, false);
    let points = curve.event_times.len();
    if points < 2 {
        return Err(Error::DegenerateCurve { points });
    }
    let x: Vec<f64> = curve.survival.iter().map(|s| s.powf(psi)).collect();
    let y = &curve.event_times;
    let (intercept, slope) =
        weighted_line(&x, y, &vec![1.0; points]).map_err(|_| Error::DegenerateCurve { points })?;
    let ybar = y.iter().sum::<f64>() / points as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - intercept - slope * xi).powi(2))
        .sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };

    let s_last = curve.final_survival();
    let probabilities: Vec<f64> = (1..=m)
        .map(|k| s_last * (1.0 - k as f64 / m as f64))
        .collect();
    let times: Vec<f64> = probabilities
        .iter()
        .map(|p| intercept + slope * p.powf(psi))
        .collect();
    let tmax = data.max_time();
    let below_censoring = (0..m).filter(|&k| times[k] < tmax).collect();
    Ok(Extrapolation {
        psi,
        censoring_time: tmax,
        intercept,
        slope,
        r_squared,
        s_last,
        probabilities,
        times,
        below_censoring,
    })
}
