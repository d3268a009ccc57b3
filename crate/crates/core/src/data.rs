//! Survival datasets and the event-first ordering used by every estimator.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Right-censored observations `(time, status, covariates)`.
///
/// `events[i]` is `true` for an observed failure and `false` for a censored
/// time. `log_times` caches `ln(times)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    times: Vec<f64>,
    events: Vec<bool>,
    covariates: DMatrix<f64>,
    log_times: Vec<f64>,
}

impl SurvivalDataset {
    pub fn new(times: Vec<f64>, events: Vec<bool>, covariates: DMatrix<f64>) -> Result<Self> {
        let n = times.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset is empty".into()));
        }
        if events.len() != n || covariates.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "{} times, {} statuses, {} covariate rows",
                n,
                events.len(),
                covariates.nrows()
            )));
        }
        if let Some(i) = times.iter().position(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::InvalidData(format!(
                "time at row {} must be finite and positive, got {}",
                i + 1,
                times[i]
            )));
        }
        if covariates.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidData("covariates must be finite".into()));
        }
        let log_times = times.iter().map(|t| t.ln()).collect();
        Ok(Self {
            times,
            events,
            covariates,
            log_times,
        })
    }

    /// Builds a dataset from 0/1 status codes.
    pub fn from_statuses(times: Vec<f64>, statuses: &[u8], covariates: DMatrix<f64>) -> Result<Self> {
        let events = statuses
            .iter()
            .enumerate()
            .map(|(i, s)| match s {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::InvalidData(format!(
                    "status at row {} must be 0 or 1, got {}",
                    i + 1,
                    other
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(times, events, covariates)
    }

    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn log_times(&self) -> &[f64] {
        &self.log_times
    }

    pub fn censoring_rate(&self) -> f64 {
        self.events.iter().filter(|e| !**e).count() as f64 / self.n() as f64
    }
}

/// A dataset sorted by time with events before censored observations at
/// equal times.
///
/// `permutation[k]` is the original row of ordered position `k`. Imputation
/// helpers may raise the last log time or reclassify its status without
/// reordering, so positions stay comparable across pipeline stages.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedDataset {
    times: Vec<f64>,
    log_times: Vec<f64>,
    events: Vec<bool>,
    covariates: DMatrix<f64>,
    permutation: Vec<usize>,
}

/// Sorts `data` by time, placing events before censored observations at tied
/// times. The sort is stable within tie groups.
pub fn order_dataset(data: &SurvivalDataset) -> OrderedDataset {
    let mut permutation: Vec<usize> = (0..data.n()).collect();
    permutation.sort_by(|&a, &b| {
        data.times[a]
            .total_cmp(&data.times[b])
            .then_with(|| data.events[b].cmp(&data.events[a]))
    });
    let p = data.p();
    let covariates = DMatrix::from_fn(data.n(), p, |i, j| data.covariates[(permutation[i], j)]);
    OrderedDataset {
        times: permutation.iter().map(|&i| data.times[i]).collect(),
        log_times: permutation.iter().map(|&i| data.log_times[i]).collect(),
        events: permutation.iter().map(|&i| data.events[i]).collect(),
        covariates,
        permutation,
    }
}

impl OrderedDataset {
    pub fn n(&self) -> usize {
        self.times.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn log_times(&self) -> &[f64] {
        &self.log_times
    }

    pub fn events(&self) -> &[bool] {
        &self.events
    }

    pub fn covariates(&self) -> &DMatrix<f64> {
        &self.covariates
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.covariates.row(i).transpose()
    }

    pub fn last_is_censored(&self) -> bool {
        !self.events[self.n() - 1]
    }

    pub fn max_time(&self) -> f64 {
        self.times[self.n() - 1]
    }

    /// Positions of censored observations sharing the maximum time.
    pub fn tied_censored_max(&self) -> Vec<usize> {
        let tmax = self.max_time();
        (0..self.n())
            .filter(|&i| !self.events[i] && self.times[i] == tmax)
            .collect()
    }

    /// Copy with the last ordered status set to an event.
    pub fn with_last_event(&self) -> Self {
        let mut out = self.clone();
        let n = out.n();
        out.events[n - 1] = true;
        out
    }

    /// Copy with the last ordered observation moved to `log_time` and marked
    /// as an event. `log_time` must not be below the current value.
    pub fn with_imputed_last(&self, log_time: f64) -> Self {
        let mut out = self.with_last_event();
        let n = out.n();
        debug_assert!(log_time >= out.log_times[n - 1]);
        out.log_times[n - 1] = log_time;
        out.times[n - 1] = log_time.exp();
        out
    }

    /// Copy with every status replaced; used by tests and resampling checks.
    pub fn with_events(&self, events: Vec<bool>) -> Result<Self> {
        if events.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "{} statuses for {} observations",
                events.len(),
                self.n()
            )));
        }
        let mut out = self.clone();
        out.events = events;
        Ok(out)
    }

    pub fn to_dataset(&self) -> SurvivalDataset {
        SurvivalDataset {
            times: self.times.clone(),
            events: self.events.clone(),
            covariates: self.covariates.clone(),
            log_times: self.log_times.clone(),
        }
    }
}
