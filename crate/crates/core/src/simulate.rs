//! Monte Carlo studies on log-normal AFT data with a censored maximum.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bj::child_rng;
use crate::data::{order_dataset, SurvivalDataset};
use crate::error::{Error, Result};
use crate::impute::{run_pipeline, ImputationMethod, PipelineOptions};
use crate::swls::default_ridge;

fn default_pilot_size() -> usize {
    10_000
}

fn default_calibration_tol() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

fn default_methods() -> Vec<ImputationMethod> {
    ImputationMethod::ALL.to_vec()
}

fn default_n_draws() -> usize {
    100
}

fn default_m() -> usize {
    3
}

/// Study configuration, read from flat JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub beta: Vec<f64>,
    pub sigma: f64,
    /// Covariate correlation `rho^|i-j|`.
    #[serde(default)]
    pub rho: f64,
    /// Target censoring percentage.
    pub target_censoring: f64,
    pub replications: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_methods")]
    pub methods: Vec<ImputationMethod>,
    /// `None` uses `0.01 sqrt(2 ln p)`.
    #[serde(default)]
    pub lambda2: Option<f64>,
    #[serde(default = "default_pilot_size")]
    pub pilot_size: usize,
    /// Calibration tolerance in percentage points.
    #[serde(default = "default_calibration_tol")]
    pub calibration_tol: f64,
    #[serde(default = "default_true")]
    pub force_censored_max: bool,
    #[serde(default = "default_n_draws")]
    pub n_draws: usize,
    #[serde(default = "default_m")]
    pub m: usize,
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let config: Self = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            if path == "." {
                Error::InvalidConfig(e.inner().to_string())
            } else {
                Error::InvalidConfig(format!("{path}: {}", e.inner()))
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::InvalidConfig(format!("{field}: {why}")));
        if self.n < 2 {
            return bad("n", format!("need at least 2 observations, got {}", self.n));
        }
        if self.p == 0 {
            return bad("p", "need at least one covariate".into());
        }
        if self.beta.len() != self.p {
            return bad("beta", format!("length {} does not match p = {}", self.beta.len(), self.p));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return bad("beta", "entries must be finite".into());
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return bad("sigma", format!("must be nonnegative, got {}", self.sigma));
        }
        if !(self.rho.abs() < 1.0) {
            return bad("rho", format!("must lie in (-1, 1), got {}", self.rho));
        }
        if !(0.0..100.0).contains(&self.target_censoring) {
            return bad(
                "target_censoring",
                format!("must lie in [0, 100), got {}", self.target_censoring),
            );
        }
        if self.replications < 2 {
            return bad("replications", format!("need at least 2, got {}", self.replications));
        }
        if self.methods.is_empty() {
            return bad("methods", "list is empty".into());
        }
        if let Some(l) = self.lambda2 {
            if !(l.is_finite() && l >= 0.0) {
                return bad("lambda2", format!("must be nonnegative, got {l}"));
            }
        }
        if self.pilot_size == 0 {
            return bad("pilot_size", "must be positive".into());
        }
        if !(self.calibration_tol > 0.0) {
            return bad("calibration_tol", "must be positive".into());
        }
        if self.n_draws == 0 {
            return bad("n_draws", "must be positive".into());
        }
        Ok(())
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2.unwrap_or_else(|| default_ridge(self.p))
    }
}

/// Rows iid normal with unit variances and correlation `rho^|i-j|`.
pub fn gen_covariates<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, rng: &mut R) -> DMatrix<f64> {
    let corr = DMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
    let factor = corr
        .cholesky()
        .expect("correlation rho^|i-j| with |rho| < 1 is positive definite")
        .l();
    let z: DMatrix<f64> = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    z * factor.transpose()
}

fn gen_failure_times<R: Rng + ?Sized>(config: &SimConfig, n: usize, rng: &mut R) -> (DMatrix<f64>, Vec<f64>) {
    let x = gen_covariates(n, config.p, config.rho, rng);
    let beta = DVector::from_column_slice(&config.beta);
    let lin = &x * beta;
    let times = lin
        .iter()
        .map(|l| {
            let e: f64 = StandardNormal.sample(rng);
            (config.alpha + l + config.sigma * e).exp()
        })
        .collect();
    (x, times)
}

/// Scale `a` of the `U(a, 2a)` censoring law giving the target censoring
/// rate on a pilot sample, by bisection on `log a`.
pub fn calibrate_censoring<R: Rng + ?Sized>(config: &SimConfig, rng: &mut R) -> Result<f64> {
    let target = config.target_censoring / 100.0;
    let tol = config.calibration_tol / 100.0;
    if target <= 0.0 {
        return Err(Error::CalibrationFailed(
            "target censoring must be positive".into(),
        ));
    }
    let (_, times) = gen_failure_times(config, config.pilot_size, rng);
    let u: Vec<f64> = (0..config.pilot_size).map(|_| rng.random::<f64>()).collect();
    let rate = |a: f64| {
        let censored = times.iter().zip(&u).filter(|(t, u)| **t > a * (1.0 + **u)).count();
        censored as f64 / times.len() as f64
    };

    let mut lo = 1e-6f64;
    let mut hi = 1.0f64;
    let mut steps = 0;
    while rate(lo) < target {
        lo /= 2.0;
        steps += 1;
        if steps > 200 {
            return Err(Error::CalibrationFailed(format!(
                "cannot reach {}% censoring",
                config.target_censoring
            )));
        }
    }
    while rate(hi) > target {
        hi *= 2.0;
        steps += 1;
        if steps > 400 {
            return Err(Error::CalibrationFailed(format!(
                "cannot get down to {}% censoring",
                config.target_censoring
            )));
        }
    }
    let (mut llo, mut lhi) = (lo.ln(), hi.ln());
    for _ in 0..200 {
        let mid = 0.5 * (llo + lhi);
        let r = rate(mid.exp());
        if (r - target).abs() <= tol {
            return Ok(mid.exp());
        }
        if r > target {
            llo = mid;
        } else {
            lhi = mid;
        }
    }
    Err(Error::CalibrationFailed(format!(
        "no scale within {} points of {}% after 200 bisection steps",
        config.calibration_tol, config.target_censoring
    )))
}

const MAX_REDRAWS: usize = 1000;

/// One dataset with `U(a, 2a)` censoring. When forcing is enabled the
/// censoring vector is redrawn until the largest observed time is censored.
pub fn gen_dataset<R: Rng + ?Sized>(config: &SimConfig, a: f64, rng: &mut R) -> Result<SurvivalDataset> {
    let n = config.n;
    let (x, times) = gen_failure_times(config, n, rng);
    let law = Uniform::new(a, 2.0 * a).map_err(|e| Error::InvalidConfig(format!("censoring scale: {e}")))?;
    let observe = |c: &[f64]| -> (Vec<f64>, Vec<bool>) {
        times
            .iter()
            .zip(c)
            .map(|(t, c)| if t <= c { (*t, true) } else { (*c, false) })
            .unzip()
    };
    let argmax = |v: &[f64]| {
        (0..v.len())
            .max_by(|&i, &j| v[i].total_cmp(&v[j]))
            .expect("n >= 2")
    };

    let mut c: Vec<f64> = (0..n).map(|_| law.sample(rng)).collect();
    let (mut observed, mut events) = observe(&c);
    if config.force_censored_max {
        let mut redraws = 0;
        while events[argmax(&observed)] && redraws < MAX_REDRAWS {
            c = (0..n).map(|_| law.sample(rng)).collect();
            (observed, events) = observe(&c);
            redraws += 1;
        }
        let top = argmax(&observed);
        if events[top] {
            // Censor the maximal event strictly above the runner-up so it
            // stays the largest observation.
            let second = (0..n)
                .filter(|&i| i != top)
                .map(|i| observed[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let lower = if a.max(second) < times[top] { a.max(second) } else { second };
            let ct = rng.random_range(lower..times[top]);
            observed[top] = ct;
            events[top] = false;
        }
    }
    SurvivalDataset::new(observed, events, x)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientSummary {
    pub index: usize,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: ImputationMethod,
    pub label: String,
    pub successes: usize,
    pub failures: usize,
    /// Distinct failure messages with their counts.
    pub failure_messages: Vec<(String, usize)>,
    pub coefficients: Vec<CoefficientSummary>,
    /// Per-replication estimates; `None` where the pipeline failed.
    pub estimates: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensoringSummary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub config: SimConfig,
    pub censoring_scale: f64,
    pub lambda2: f64,
    pub replications: usize,
    pub censoring: CensoringSummary,
    pub methods: Vec<MethodSummary>,
}

impl StudyReport {
    pub fn method(&self, method: ImputationMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }

    /// One row per method, coefficient and statistic.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,coefficient,statistic,value\n");
        for m in &self.methods {
            for c in &m.coefficients {
                for (name, value) in [
                    ("bias", c.bias),
                    ("variance", c.variance),
                    ("mse", c.mse),
                ] {
                    let _ = writeln!(out, "{},beta{},{},{}", m.method, c.index + 1, name, value);
                }
            }
            let _ = writeln!(out, "{},,successes,{}", m.method, m.successes);
            let _ = writeln!(out, "{},,failures,{}", m.method, m.failures);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct Replication {
    censoring_rate: f64,
    estimates: Vec<std::result::Result<Vec<f64>, String>>,
}

/// Runs every configured method on `replications` simulated datasets.
///
/// The pilot uses stream 0 of the seed and replication `r` stream `r + 1`,
/// so results are identical for any thread count.
pub fn run_study(config: &SimConfig) -> Result<StudyReport> {
    config.validate()?;
    let a = calibrate_censoring(config, &mut child_rng(config.seed, 0))?;
    let lambda2 = config.lambda2();
    let reps: Vec<Replication> = (0..config.replications)
        .into_par_iter()
        .map(|r| -> Result<Replication> {
            let mut rng = child_rng(config.seed, r as u64 + 1);
            let data = gen_dataset(config, a, &mut rng)?;
            let options = PipelineOptions {
                seed: rng.next_u64(),
                n_draws: config.n_draws,
                m: config.m,
                ..PipelineOptions::default()
            };
            let ordered = order_dataset(&data);
            let estimates = config
                .methods
                .iter()
                .map(|&method| {
                    run_pipeline(&ordered, method, lambda2, &options)
                        .map(|res| res.fit.beta)
                        .map_err(|e| e.to_string())
                })
                .collect();
            Ok(Replication {
                censoring_rate: data.censoring_rate(),
                estimates,
            })
        })
        .collect::<Result<_>>()?;

    let rates: Vec<f64> = reps.iter().map(|r| r.censoring_rate).collect();
    let censoring = CensoringSummary {
        mean: rates.iter().sum::<f64>() / rates.len() as f64,
        min: rates.iter().copied().fold(f64::INFINITY, f64::min),
        max: rates.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    };
    let methods = config
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| summarize(method, &config.beta, reps.iter().map(|r| &r.estimates[k])))
        .collect();
    Ok(StudyReport {
        config: config.clone(),
        censoring_scale: a,
        lambda2,
        replications: config.replications,
        censoring,
        methods,
    })
}

fn summarize<'a>(
    method: ImputationMethod,
    truth: &[f64],
    outcomes: impl Iterator<Item = &'a std::result::Result<Vec<f64>, String>>,
) -> MethodSummary {
    let mut estimates = Vec::new();
    let mut failure_messages: Vec<(String, usize)> = Vec::new();
    for outcome in outcomes {
        match outcome {
            Ok(b) => estimates.push(Some(b.clone())),
            Err(msg) => {
                estimates.push(None);
                match failure_messages.iter_mut().find(|(m, _)| m == msg) {
                    Some(entry) => entry.1 += 1,
                    None => failure_messages.push((msg.clone(), 1)),
                }
            }
        }
    }
    let ok: Vec<&Vec<f64>> = estimates.iter().flatten().collect();
    let count = ok.len() as f64;
    let coefficients = truth
        .iter()
        .enumerate()
        .map(|(j, &truth)| {
            let mean = ok.iter().map(|b| b[j]).sum::<f64>() / count;
            let variance = ok.iter().map(|b| (b[j] - mean).powi(2)).sum::<f64>() / count;
            let bias = mean - truth;
            CoefficientSummary {
                index: j,
                truth,
                mean,
                bias,
                variance,
                mse: variance + bias * bias,
            }
        })
        .collect();
    MethodSummary {
        method,
        label: method.label().to_string(),
        successes: ok.len(),
        failures: estimates.len() - ok.len(),
        failure_messages,
        coefficients,
        estimates,
    }
}
