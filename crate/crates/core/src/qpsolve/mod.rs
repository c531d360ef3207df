//! Dense convex QP solver.
//!
//! Solves `minimize ½xᵀPx + qᵀx  subject to  l ≤ Ax ≤ u` with an operator
//! splitting (ADMM) iteration, Ruiz equilibration, a cached factorization of
//! the reduced KKT matrix and an optional active-set polish.
//!
//! Dual sign convention: `Px + q + Aᵀy = 0` at optimum, so `y < 0` on rows
//! whose lower bound is active and `y > 0` on rows whose upper bound is active.

mod admm;
mod kkt;

pub use admm::QpWorkspace;
pub use kkt::{verify_kkt, KktReport};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, thiserror::Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("lower bound exceeds upper bound on row {row}: {l} > {u}")]
    InvalidBounds { row: usize, l: f64, u: f64 },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("cost matrix is not symmetric")]
    NotSymmetric,
    #[error("KKT matrix factorization failed")]
    Factorization,
}

/// `minimize ½xᵀPx + qᵀx  s.t.  l ≤ Ax ≤ u`. Infinite bounds are allowed.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        l: DVector<f64>,
        u: DVector<f64>,
    ) -> Result<Self, QpError> {
        let qp = Self { p, q, a, l, u };
        qp.validate()?;
        Ok(qp)
    }

    /// Problem without constraints.
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Result<Self, QpError> {
        let n = q.len();
        Self::new(p, q, DMatrix::zeros(0, n), DVector::zeros(0), DVector::zeros(0))
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.q.len();
        let m = self.l.len();
        if self.p.shape() != (n, n) {
            return Err(QpError::Dimension(format!(
                "P is {:?}, expected ({n}, {n})",
                self.p.shape()
            )));
        }
        if self.a.shape() != (m, n) {
            return Err(QpError::Dimension(format!(
                "A is {:?}, expected ({m}, {n})",
                self.a.shape()
            )));
        }
        if self.u.len() != m {
            return Err(QpError::Dimension(format!(
                "u has {} rows, l has {m}",
                self.u.len()
            )));
        }
        self.check_values()?;
        self.check_bounds(&self.l, &self.u)
    }

    fn check_values(&self) -> Result<(), QpError> {
        if self.p.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("P"));
        }
        if self.q.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("q"));
        }
        if self.a.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("A"));
        }
        let scale = self.p.amax().max(1.0);
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                if (self.p[(i, j)] - self.p[(j, i)]).abs() > 1e-12 * scale {
                    return Err(QpError::NotSymmetric);
                }
            }
        }
        Ok(())
    }

    pub(crate) fn check_bounds(&self, l: &DVector<f64>, u: &DVector<f64>) -> Result<(), QpError> {
        if l.len() != self.m() || u.len() != self.m() {
            return Err(QpError::Dimension(format!(
                "bounds have {} and {} rows, expected {}",
                l.len(),
                u.len(),
                self.m()
            )));
        }
        for i in 0..self.m() {
            if l[i].is_nan() || u[i].is_nan() || l[i] == f64::INFINITY || u[i] == f64::NEG_INFINITY {
                return Err(QpError::NonFinite("bounds"));
            }
            if l[i] > u[i] {
                return Err(QpError::InvalidBounds {
                    row: i,
                    l: l[i],
                    u: u[i],
                });
            }
        }
        Ok(())
    }

    /// Plain-text dump: dimensions, then `P`, `q`, `A`, `l`, `u` one row per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("n {}\nm {}\n", self.n(), self.m());
        let row = |out: &mut String, name: &str, vals: &mut dyn Iterator<Item = f64>| {
            out.push_str(name);
            for v in vals {
                out.push_str(&format!(" {v:e}"));
            }
            out.push('\n');
        };
        for i in 0..self.n() {
            row(&mut out, "P", &mut self.p.row(i).iter().copied());
        }
        row(&mut out, "q", &mut self.q.iter().copied());
        for i in 0..self.m() {
            row(&mut out, "A", &mut self.a.row(i).iter().copied());
        }
        row(&mut out, "l", &mut self.l.iter().copied());
        row(&mut out, "u", &mut self.u.iter().copied());
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Tolerance of the primal infeasibility certificate.
    pub eps_prim_inf: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    /// Rebalance `ρ` from the residual ratio when it is off by more than
    /// `adaptive_rho_tolerance`; checked every `adaptive_rho_interval`
    /// iterations.
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub adaptive_rho_tolerance: f64,
    pub scaling_iters: usize,
    /// Residuals are evaluated every `check_interval` iterations.
    pub check_interval: usize,
    pub polish: bool,
    pub polish_delta: f64,
    pub polish_refine_iters: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-5,
            eps_rel: 1e-5,
            eps_prim_inf: 1e-6,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            adaptive_rho_tolerance: 5.0,
            scaling_iters: 10,
            check_interval: 5,
            polish: true,
            polish_delta: 1e-7,
            polish_refine_iters: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Solved,
    MaxIter,
    PrimalInfeasible,
}

impl fmt::Display for QpStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QpStatus::Solved => "solved",
            QpStatus::MaxIter => "max-iter",
            QpStatus::PrimalInfeasible => "primal-infeasible",
        })
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub prim_res: f64,
    pub dual_res: f64,
    pub objective: f64,
    pub polished: bool,
}

/// One-shot solve with a fresh workspace.
pub fn solve(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    let mut ws = QpWorkspace::new(problem.clone(), settings.clone())?;
    Ok(ws.solve())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> QpProblem {
        QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, f64::INFINITY),
        )
        .unwrap()
    }

    #[test]
    fn toy_problem() {
        let s = solve(&toy(), &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.x[0] - 1.0).abs() < 1e-6);
        assert!((s.y[0] + 2.0).abs() < 1e-6);
        assert!((s.objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn unconstrained_identity() {
        let q = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let qp = QpProblem::unconstrained(DMatrix::identity(3, 3), q.clone()).unwrap();
        let s = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.x + q).amax() < 1e-6);
    }

    #[test]
    fn upper_bound_gives_positive_dual() {
        // min (x − 2)² s.t. x ≤ 1
        let qp = QpProblem::new(
            DMatrix::from_element(1, 1, 2.0),
            DVector::from_element(1, -4.0),
            DMatrix::from_element(1, 1, 1.0),
            DVector::from_element(1, f64::NEG_INFINITY),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let s = solve(&qp, &QpSettings::default()).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-6);
        assert!((s.y[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn equality_constraint() {
        // min x² + y² s.t. x + y = 1
        let qp = QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, 1.0),
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let s = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::Solved);
        assert!((s.x[0] - 0.5).abs() < 1e-6 && (s.x[1] - 0.5).abs() < 1e-6);
        assert!((s.y[0] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x ≥ 1 and x ≤ 0
        let qp = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::from_column_slice(2, 1, &[1.0, 1.0]),
            DVector::from_vec(vec![1.0, f64::NEG_INFINITY]),
            DVector::from_vec(vec![f64::INFINITY, 0.0]),
        )
        .unwrap();
        let s = solve(&qp, &QpSettings::default()).unwrap();
        assert_eq!(s.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            QpProblem::new(
                DMatrix::identity(2, 2),
                DVector::zeros(3),
                DMatrix::zeros(0, 3),
                DVector::zeros(0),
                DVector::zeros(0)
            ),
            Err(QpError::Dimension(_))
        ));
        assert!(matches!(
            QpProblem::new(
                DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]),
                DVector::zeros(2),
                DMatrix::zeros(0, 2),
                DVector::zeros(0),
                DVector::zeros(0)
            ),
            Err(QpError::NotSymmetric)
        ));
        let mut t = toy();
        t.l[0] = 2.0;
        t.u[0] = 1.0;
        assert!(matches!(t.validate(), Err(QpError::InvalidBounds { .. })));
        t.l[0] = f64::NAN;
        assert!(matches!(t.validate(), Err(QpError::NonFinite(_))));
    }

    #[test]
    fn text_dump_has_all_sections() {
        let txt = toy().to_text();
        assert!(txt.starts_with("n 1\nm 1\n"));
        for key in ["P ", "q ", "A ", "l ", "u "] {
            assert!(txt.lines().any(|l| l.starts_with(key)), "{key}");
        }
    }

    #[test]
    fn deterministic() {
        let a = solve(&toy(), &QpSettings::default()).unwrap();
        let b = solve(&toy(), &QpSettings::default()).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
    }
}
