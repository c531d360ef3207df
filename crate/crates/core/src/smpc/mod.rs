//! Stochastic MPC: augmented GP predictor, LQR uncertainty tube,
//! chance-constraint tightening and dense condensing into a QP.

mod augment;
mod condense;
mod controller;
mod lqr;
mod tighten;
mod tube;

pub use augment::{build_augmented, disturbance_forecast, AugmentedModel, DisturbanceForecast};
pub use condense::{simulate_cost, CondensedPredictor, MpcProblem};
pub use controller::{MpcController, MpcOutput, KKT_TOL};
pub use lqr::{dare_residual, dlqr, spectral_radius, Lqr};
pub use tighten::{normal_quantile, probability_level, tighten, tighten_box};
pub use tube::{propagate_uncertainty, UncertaintyTube};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dynamics::{DynamicsError, INPUT_DIM, STATE_DIM};
use crate::qpsolve::QpError;
use crate::ssgp::GpError;

#[derive(Debug, thiserror::Error)]
pub enum SmpcError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid polytope: {0}")]
    Polytope(String),
    #[error("probability {0} outside (0, 1)")]
    Probability(f64),
    #[error("Riccati iteration did not converge in {0} steps")]
    RiccatiDivergence(usize),
    #[error("QP solver: {0}")]
    Qp(#[from] QpError),
    #[error("dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("GP: {0}")]
    Gp(#[from] GpError),
}

/// MPC weights, horizon, constraint bounds and chance levels.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Predictor sampling interval (s).
    pub dt: f64,
    pub q_diag: [f64; STATE_DIM],
    pub r_diag: [f64; INPUT_DIM],
    /// Symmetric bounds `|x_i| ≤ b_i`.
    pub state_bounds: [f64; STATE_DIM],
    pub p_x: f64,
    pub p_u: f64,
    /// Linear cost on the state-constraint slack.
    pub slack_penalty: f64,
    /// Thrust trim; the exact hover thrust of the quad when absent.
    pub u_hover: Option<f64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 25,
            dt: 0.1,
            q_diag: [6.0, 6.0, 6.0, 6.0, 6.0, 6.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            r_diag: [5e3, 4e4, 4e4, 4e4],
            state_bounds: [
                15.0,
                15.0,
                6.0,
                10.0,
                10.0,
                10.0,
                PI / 3.0,
                PI / 3.0,
                PI / 5.0,
                2.0 * PI,
                2.0 * PI,
                2.0 * PI,
            ],
            p_x: 0.95,
            p_u: 0.95,
            slack_penalty: 1e6,
            u_hover: None,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<(), SmpcError> {
        if self.horizon < 1 {
            return Err(SmpcError::Config("horizon must be at least 1".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SmpcError::Config(format!("dt = {}", self.dt)));
        }
        if self.q_diag.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(SmpcError::Config("Q must be PSD".into()));
        }
        if self.r_diag.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(SmpcError::Config("R must be PD".into()));
        }
        if self.state_bounds.iter().any(|&v| !(v > 0.0)) {
            return Err(SmpcError::Config("state bounds must be positive".into()));
        }
        for (name, p) in [("p_x", self.p_x), ("p_u", self.p_u)] {
            if !(0.0..1.0).contains(&p) {
                return Err(SmpcError::Config(format!("{name} = {p} outside [0, 1)")));
            }
        }
        if !(self.slack_penalty > 0.0) {
            return Err(SmpcError::Config("slack penalty must be positive".into()));
        }
        if let Some(u) = self.u_hover {
            if !(u > 0.0 && u < 1.0) {
                return Err(SmpcError::Config(format!("u_hover = {u}")));
            }
        }
        Ok(())
    }

    pub fn q_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.q_diag))
    }

    pub fn r_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.r_diag))
    }

    /// `{x : |x_i| ≤ b_i}` as a polytope.
    pub fn state_set(&self) -> Polytope {
        const NAMES: [&str; STATE_DIM] = [
            "x", "y", "z", "vx", "vy", "vz", "roll", "pitch", "yaw", "p", "q", "r",
        ];
        let b = DVector::from_column_slice(&self.state_bounds);
        Polytope::symmetric_box(&b, &NAMES).expect("validated bounds")
    }

    /// Input box in deviation coordinates around trim `u_s`.
    pub fn input_box(&self, u_s: f64) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_vec(vec![-u_s, -1.0, -1.0, -1.0]),
            DVector::from_vec(vec![1.0 - u_s, 1.0, 1.0, 1.0]),
        )
    }
}

/// Half-space set `{x : H·x ≤ h}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    pub h_mat: DMatrix<f64>,
    pub h: DVector<f64>,
    pub labels: Vec<String>,
}

impl Polytope {
    pub fn new(h_mat: DMatrix<f64>, h: DVector<f64>, labels: Vec<String>) -> Result<Self, SmpcError> {
        if h_mat.nrows() != h.len() || labels.len() != h.len() {
            return Err(SmpcError::Polytope(format!(
                "{} rows in H, {} in h, {} labels",
                h_mat.nrows(),
                h.len(),
                labels.len()
            )));
        }
        for i in 0..h_mat.nrows() {
            if h_mat.row(i).iter().all(|&v| v == 0.0) {
                return Err(SmpcError::Polytope(format!("row {i} of H is zero")));
            }
            if !h[i].is_finite() || h_mat.row(i).iter().any(|v| !v.is_finite()) {
                return Err(SmpcError::Polytope(format!("row {i} is not finite")));
            }
        }
        Ok(Self { h_mat, h, labels })
    }

    /// `|x_i| ≤ b_i`: rows `x_i ≤ b_i` followed by `−x_i ≤ b_i`.
    pub fn symmetric_box(b: &DVector<f64>, names: &[&str]) -> Result<Self, SmpcError> {
        let n = b.len();
        if names.len() != n {
            return Err(SmpcError::Polytope("one name per dimension".into()));
        }
        let mut h_mat = DMatrix::zeros(2 * n, n);
        let mut h = DVector::zeros(2 * n);
        let mut labels = Vec::with_capacity(2 * n);
        for i in 0..n {
            h_mat[(i, i)] = 1.0;
            h_mat[(n + i, i)] = -1.0;
            h[i] = b[i];
            h[n + i] = b[i];
        }
        labels.extend(names.iter().map(|s| format!("{s}<=")));
        labels.extend(names.iter().map(|s| format!("{s}>=")));
        Self::new(h_mat, h, labels)
    }

    pub fn dim(&self) -> usize {
        self.h_mat.ncols()
    }

    pub fn rows(&self) -> usize {
        self.h.len()
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        let hx = &self.h_mat * x;
        (0..self.rows()).all(|i| hx[i] <= self.h[i] + tol)
    }
}
