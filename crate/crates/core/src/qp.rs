//! Dense strictly convex quadratic programs
//!
//! ```text
//! minimize  -d'b + 1/2 b'Db   subject to  A b >= b0
//! ```
//!
//! solved with the Goldfarb-Idnani active-set method. The iteration starts at
//! the unconstrained minimizer `D^{-1} d` and adds violated constraints one
//! at a time, solving an equality-constrained KKT subproblem per step and
//! dropping constraints whose multipliers would turn negative. Primal
//! feasibility is restored monotonically, and a violated constraint that
//! cannot be added proves the feasible set empty.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    /// Linear term `d`.
    pub d: DVector<f64>,
    /// Symmetric positive-definite quadratic term `D`.
    pub dmat: DMatrix<f64>,
    /// Constraint rows, `m x p`.
    pub a: DMatrix<f64>,
    pub b0: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution {
    pub b: DVector<f64>,
    /// Constraint indices in the final working set, ascending.
    pub active_set: Vec<usize>,
    /// Lagrange multipliers, one per constraint row.
    pub multipliers: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl QpProblem {
    pub fn new(
        d: DVector<f64>,
        dmat: DMatrix<f64>,
        a: DMatrix<f64>,
        b0: DVector<f64>,
    ) -> Result<Self> {
        let p = d.len();
        if dmat.nrows() != p || dmat.ncols() != p {
            return Err(Error::DimensionMismatch(format!(
                "D is {}x{}, expected {p}x{p}",
                dmat.nrows(),
                dmat.ncols()
            )));
        }
        if a.ncols() != p || a.nrows() != b0.len() {
            return Err(Error::DimensionMismatch(format!(
                "A is {}x{} with {} bounds, expected {p} columns",
                a.nrows(),
                a.ncols(),
                b0.len()
            )));
        }
        Ok(Self { d, dmat, a, b0 })
    }

    /// Problem without constraints.
    pub fn unconstrained(d: DVector<f64>, dmat: DMatrix<f64>) -> Result<Self> {
        let p = d.len();
        Self::new(d, dmat, DMatrix::zeros(0, p), DVector::zeros(0))
    }

    pub fn p(&self) -> usize {
        self.d.len()
    }

    pub fn m(&self) -> usize {
        self.b0.len()
    }

    pub fn objective(&self, b: &DVector<f64>) -> f64 {
        0.5 * b.dot(&(&self.dmat * b)) - self.d.dot(b)
    }

    pub fn default_max_iter(&self) -> usize {
        50 * (self.p() + self.m())
    }

    /// Largest of stationarity, primal feasibility, dual feasibility and
    /// complementarity violations at `(b, multipliers)`.
    pub fn kkt_residual(&self, b: &DVector<f64>, multipliers: &DVector<f64>) -> f64 {
        let stationarity = (&self.dmat * b - &self.d - self.a.transpose() * multipliers).amax();
        let slack = &self.a * b - &self.b0;
        let mut worst = stationarity;
        for (s, mu) in slack.iter().zip(multipliers.iter()) {
            worst = worst.max(-s).max(-mu).max((mu * s).abs());
        }
        worst
    }
}

pub fn solve_qp(problem: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution> {
    let p = problem.p();
    let m = problem.m();
    let dmat = &problem.dmat;
    for i in 0..p {
        for j in 0..i {
            let scale = 1.0 + dmat[(i, j)].abs().max(dmat[(j, i)].abs());
            if (dmat[(i, j)] - dmat[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::InvalidData(format!(
                    "D is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let chol = dmat.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;

    let mut x = chol.solve(&problem.d);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut iterations = 0;

    let row = |j: usize| -> DVector<f64> { problem.a.row(j).transpose() };
    let finish = |x: DVector<f64>, active: &[usize], u: &[f64], iterations: usize| {
        let mut multipliers = DVector::zeros(m);
        for (&j, &mu) in active.iter().zip(u) {
            multipliers[j] = mu;
        }
        let mut sorted = active.to_vec();
        sorted.sort_unstable();
        let kkt_residual = problem.kkt_residual(&x, &multipliers);
        QpSolution {
            b: x,
            active_set: sorted,
            multipliers,
            kkt_residual,
            iterations,
        }
    };

    loop {
        // Smallest-index violated constraint enters (Bland's rule).
        let entering = (0..m).find(|&j| {
            !active.contains(&j) && problem.a.row(j).dot(&x.transpose()) - problem.b0[j] < -tol
        });
        let Some(entering) = entering else {
            return Ok(finish(x, &active, &u, iterations));
        };
        let normal = row(entering);
        let mut u_plus = u.clone();
        u_plus.push(0.0);

        loop {
            if iterations >= max_iter {
                let best = finish(x, &active, &u, iterations);
                return Err(Error::IterationLimit {
                    best: Box::new(best),
                });
            }
            iterations += 1;

            let q = active.len();
            let ginv_n = chol.solve(&normal);
            let (z, r) = if q == 0 {
                (ginv_n.clone(), DVector::zeros(0))
            } else {
                let n_active = DMatrix::from_columns(&active.iter().map(|&j| row(j)).collect::<Vec<_>>());
                let ginv_active = chol.solve(&n_active);
                let gram = n_active.transpose() * &ginv_active;
                let rhs = n_active.transpose() * &ginv_n;
                let r = match gram.clone().cholesky() {
                    Some(c) => c.solve(&rhs),
                    None => gram.lu().solve(&rhs).ok_or(Error::SingularDesign)?,
                };
                (&ginv_n - &ginv_active * &r, r)
            };

            // Partial step limit from multipliers of active constraints.
            let mut blocking: Option<(f64, usize)> = None;
            for k in 0..q {
                if r[k] > 0.0 {
                    let t = u_plus[k] / r[k];
                    if blocking.is_none_or(|(best, _)| t < best) {
                        blocking = Some((t, k));
                    }
                }
            }

            let curvature = z.dot(&normal);
            let reference = normal.dot(&ginv_n);
            if curvature <= 1e-12 * reference.max(f64::MIN_POSITIVE) {
                // Entering normal is dependent on the working set.
                let Some((t1, k)) = blocking else {
                    return Err(Error::Infeasible);
                };
                for i in 0..q {
                    u_plus[i] -= t1 * r[i];
                }
                u_plus[q] += t1;
                active.remove(k);
                u_plus.remove(k);
                continue;
            }

            let slack = normal.dot(&x) - problem.b0[entering];
            let t2 = -slack / curvature;
            let (t, drop) = match blocking {
                Some((t1, k)) if t1 < t2 => (t1, Some(k)),
                _ => (t2, None),
            };
            x += &z * t;
            for i in 0..q {
                u_plus[i] -= t * r[i];
            }
            u_plus[q] += t;
            match drop {
                None => {
                    active.push(entering);
                    u = u_plus;
                    break;
                }
                Some(k) => {
                    active.remove(k);
                    u_plus.remove(k);
                }
            }
        }
    }
}
