//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use censaft::{order_dataset, OrderedDataset, QpProblem, SurvivalDataset};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the oracle free of library samplers.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Random dataset with coarse times (so ties occur) and the requested
/// censoring probability. Set `censor_max` to force the largest time to be
/// censored.
pub fn random_dataset(
    rng: &mut ChaCha8Rng,
    n: usize,
    p: usize,
    censor_prob: f64,
    censor_max: bool,
) -> SurvivalDataset {
    let x = DMatrix::from_fn(n, p, |_, _| normal(rng));
    let mut times = Vec::with_capacity(n);
    let mut events = Vec::with_capacity(n);
    for i in 0..n {
        let lin: f64 = (0..p).map(|j| 0.5 * x[(i, j)]).sum();
        let t = (lin + 0.5 * normal(rng)).exp();
        times.push((t * 20.0).ceil() / 20.0);
        events.push(rng.random::<f64>() >= censor_prob);
    }
    if censor_max {
        let tmax = times.iter().copied().fold(f64::MIN, f64::max);
        for i in 0..n {
            if times[i] == tmax {
                events[i] = false;
            }
        }
    }
    SurvivalDataset::new(times, events, x).unwrap()
}

pub fn random_ordered(rng: &mut ChaCha8Rng, n: usize, p: usize, censor_prob: f64, censor_max: bool) -> OrderedDataset {
    order_dataset(&random_dataset(rng, n, p, censor_prob, censor_max))
}

/// Product-limit curve `(event time, S before, S after)` written from the
/// textbook definition, with the last observation optionally reclassified as
/// an event and the curve closed at zero.
pub fn km_reference(times: &[f64], events: &[bool], tail_correction: bool) -> Vec<(f64, f64, f64)> {
    let n = times.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| times[a].partial_cmp(&times[b]).unwrap().then(events[b].cmp(&events[a])));
    let mut ev: Vec<bool> = idx.iter().map(|&i| events[i]).collect();
    let t: Vec<f64> = idx.iter().map(|&i| times[i]).collect();
    if tail_correction {
        ev[n - 1] = true;
    }
    let mut distinct: Vec<f64> = t.clone();
    distinct.dedup();
    let mut s = 1.0;
    let mut out = Vec::new();
    for &u in &distinct {
        let at_risk = t.iter().filter(|&&v| v >= u).count() as f64;
        let deaths = t.iter().zip(&ev).filter(|(v, e)| **v == u && **e).count() as f64;
        if deaths > 0.0 {
            let before = s;
            s *= 1.0 - deaths / at_risk;
            out.push((u, before, s));
        }
    }
    if tail_correction {
        if let Some(last) = out.last_mut() {
            last.2 = 0.0;
        }
    }
    out
}

/// Ordinary least squares with intercept via QR; returns (intercept, slopes).
pub fn ols(x: &DMatrix<f64>, y: &[f64]) -> (f64, Vec<f64>) {
    let n = x.nrows();
    let p = x.ncols();
    let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let qr = design.qr();
    let rhs = qr.q().transpose() * DVector::from_column_slice(y);
    let coef = qr.r().solve_upper_triangular(&rhs).expect("full rank");
    (coef[0], coef.iter().skip(1).copied().collect())
}

/// Solves the QP by accelerated projected gradient ascent on the dual
/// `max_{mu >= 0} b0'mu - 1/2 (d + A'mu)' D^{-1} (d + A'mu)`.
pub fn qp_dual_oracle(problem: &QpProblem) -> DVector<f64> {
    let dinv = problem.dmat.clone().try_inverse().expect("invertible");
    let m = problem.m();
    if m == 0 {
        return &dinv * &problem.d;
    }
    let ad = &problem.a * &dinv;
    let h = &ad * problem.a.transpose();
    let c = &ad * &problem.d;
    let h: Vec<f64> = (0..m * m).map(|k| h[(k / m, k % m)]).collect();
    let step = 1.0 / h.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-12) / m as f64;
    let grad = |mu: &[f64]| -> Vec<f64> {
        (0..m)
            .map(|i| problem.b0[i] - c[i] - (0..m).map(|j| h[i * m + j] * mu[j]).sum::<f64>())
            .collect()
    };
    let mut mu = vec![0.0; m];
    let mut y = mu.clone();
    let mut t = 1.0f64;
    for _ in 0..2_000_000 {
        let g = grad(&y);
        let next: Vec<f64> = (0..m).map(|i| (y[i] + step * g[i]).max(0.0)).collect();
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let moved: f64 = (0..m).map(|i| (next[i] - mu[i]).abs()).fold(0.0, f64::max);
        // Restart momentum when it points uphill in the dual.
        let uphill: f64 = (0..m).map(|i| (y[i] - next[i]) * (next[i] - mu[i])).sum();
        if uphill > 0.0 {
            y = next.clone();
            t = 1.0;
        } else {
            y = (0..m)
                .map(|i| next[i] + (t - 1.0) / t_next * (next[i] - mu[i]))
                .collect();
            t = t_next;
        }
        mu = next;
        if moved < 1e-15 {
            break;
        }
    }
    let mu = DVector::from_column_slice(&mu);
    dinv * (&problem.d + problem.a.transpose() * mu)
}

/// Random strictly convex problem with a known feasible point.
pub fn random_qp(rng: &mut ChaCha8Rng, p: usize, m: usize) -> QpProblem {
    let g = DMatrix::from_fn(p, p, |_, _| normal(rng));
    let dmat = g.transpose() * &g / p as f64 + DMatrix::identity(p, p) * 0.5;
    let d = DVector::from_fn(p, |_, _| 3.0 * normal(rng));
    let a = DMatrix::from_fn(m, p, |_, _| normal(rng));
    let feasible = DVector::from_fn(p, |_, _| normal(rng));
    let ax = &a * &feasible;
    let b0 = DVector::from_fn(m, |i, _| {
        let slack = if rng.random::<bool>() { 0.0 } else { rng.random::<f64>() };
        ax[i] - slack
    });
    QpProblem::new(d, dmat, a, b0).unwrap()
}
