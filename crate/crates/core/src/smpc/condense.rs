use nalgebra::{DMatrix, DVector};

use super::{Polytope, SmpcError};
use crate::qpsolve::QpProblem;

/// Condensed MPC problem: the QP plus the constant part of the cost, so that
/// `qp.objective(v) + constant` equals the tracking cost of `v` (slack
/// penalty included).
#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub qp: QpProblem,
    pub constant: f64,
}

/// Dense condensing of the horizon over `v = (u_0, …, u_{N−1}, s_1, …, s_N)`,
/// where `s_k ≥ 0` softens all state rows at step `k`.
///
/// Row layout of the constraint matrix: `N·r` state rows (step-major), then
/// `N·n_u` input rows, then `N` slack rows. Dropping the slack columns and
/// rows leaves the hard-constrained problem over the inputs alone.
#[derive(Debug, Clone)]
pub struct CondensedPredictor {
    pub nx: usize,
    pub nu: usize,
    pub horizon: usize,
    ad: DMatrix<f64>,
    /// `∂x_k/∂u_j` stacked for `k = 1..N` (N·n_x × N·n_u).
    pub gamma: DMatrix<f64>,
    q: DMatrix<f64>,
    p_term: DMatrix<f64>,
    h_mat: DMatrix<f64>,
    slack_penalty: f64,
    hessian: DMatrix<f64>,
    constraints: DMatrix<f64>,
}

impl CondensedPredictor {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ad: &DMatrix<f64>,
        bd: &DMatrix<f64>,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        p_term: &DMatrix<f64>,
        state_set: &Polytope,
        horizon: usize,
        slack_penalty: f64,
    ) -> Result<Self, SmpcError> {
        let nx = ad.nrows();
        let nu = bd.ncols();
        let n = horizon;
        if n == 0
            || ad.ncols() != nx
            || bd.nrows() != nx
            || q.shape() != (nx, nx)
            || p_term.shape() != (nx, nx)
            || r.shape() != (nu, nu)
            || state_set.dim() != nx
        {
            return Err(SmpcError::Dimension("condensing".into()));
        }
        let nvu = n * nu;
        let mut gamma = DMatrix::zeros(n * nx, nvu);
        // A^i·B for i = 0..N−1
        let mut powers = Vec::with_capacity(n);
        let mut ab = bd.clone();
        for _ in 0..n {
            powers.push(ab.clone());
            ab = ad * ab;
        }
        for k in 1..=n {
            for j in 0..k {
                gamma
                    .view_mut(((k - 1) * nx, j * nu), (nx, nu))
                    .copy_from(&powers[k - 1 - j]);
            }
        }

        let nv = nvu + n;
        let mut qg = gamma.clone();
        for k in 1..=n {
            let w = if k == n { p_term } else { q };
            let block = w * gamma.rows((k - 1) * nx, nx);
            qg.rows_mut((k - 1) * nx, nx).copy_from(&block);
        }
        let mut hessian = DMatrix::zeros(nv, nv);
        let mut huu = gamma.tr_mul(&qg);
        for j in 0..n {
            let mut blk = huu.view_mut((j * nu, j * nu), (nu, nu));
            blk += r;
        }
        huu *= 2.0;
        let t = huu.transpose();
        huu += t;
        huu *= 0.5;
        hessian.view_mut((0, 0), (nvu, nvu)).copy_from(&huu);

        let rows = state_set.rows();
        let m = n * rows + nvu + n;
        let mut constraints = DMatrix::zeros(m, nv);
        for k in 1..=n {
            let hg = &state_set.h_mat * gamma.rows((k - 1) * nx, nx);
            let r0 = (k - 1) * rows;
            constraints.view_mut((r0, 0), (rows, nvu)).copy_from(&hg);
            for j in 0..rows {
                constraints[(r0 + j, nvu + k - 1)] = -1.0;
            }
        }
        for i in 0..nvu {
            constraints[(n * rows + i, i)] = 1.0;
        }
        for k in 0..n {
            constraints[(n * rows + nvu + k, nvu + k)] = 1.0;
        }
        Ok(Self {
            nx,
            nu,
            horizon: n,
            ad: ad.clone(),
            gamma,
            q: q.clone(),
            p_term: p_term.clone(),
            h_mat: state_set.h_mat.clone(),
            slack_penalty,
            hessian,
            constraints,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.horizon * (self.nu + 1)
    }

    pub fn num_constraints(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn state_rows(&self) -> usize {
        self.h_mat.nrows()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.constraints
    }

    /// Rows of the hard-constrained problem: state rows then input rows.
    pub fn hard_rows(&self) -> usize {
        self.horizon * (self.state_rows() + self.nu)
    }

    /// Hard-constrained problem over the inputs alone, from the soft data.
    pub fn hard_problem(&self, soft: &QpProblem) -> Result<QpProblem, SmpcError> {
        let nvu = self.horizon * self.nu;
        let m = self.hard_rows();
        Ok(QpProblem::new(
            soft.p.view((0, 0), (nvu, nvu)).into_owned(),
            soft.q.rows(0, nvu).into_owned(),
            soft.a.view((0, 0), (m, nvu)).into_owned(),
            soft.l.rows(0, m).into_owned(),
            soft.u.rows(0, m).into_owned(),
        )?)
    }

    /// `Ad^k·x0` for `k = 1..N`.
    pub fn free_response(&self, x0: &DVector<f64>) -> Vec<DVector<f64>> {
        let mut out = Vec::with_capacity(self.horizon);
        let mut x = x0.clone();
        for _ in 0..self.horizon {
            x = &self.ad * x;
            out.push(x.clone());
        }
        out
    }

    /// Linear cost, bounds and constant term.
    ///
    /// `free` holds the input-free prediction for `k = 1..N`, `reference`
    /// the targets for `k = 0..N`, `state_bounds` the right-hand side of the
    /// (tightened) state polytope for `k = 1..N` and `input_bounds` the
    /// deviation box for `k = 0..N−1`.
    #[allow(clippy::type_complexity)]
    pub fn bounds_and_cost(
        &self,
        x0: &DVector<f64>,
        free: &[DVector<f64>],
        reference: &[DVector<f64>],
        state_bounds: &[DVector<f64>],
        input_bounds: &[(DVector<f64>, DVector<f64>)],
    ) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>, f64), SmpcError> {
        let (nx, nu, n) = (self.nx, self.nu, self.horizon);
        let rows = self.state_rows();
        if x0.len() != nx
            || free.len() != n
            || reference.len() != n + 1
            || state_bounds.len() != n
            || input_bounds.len() != n
            || free.iter().chain(reference.iter()).any(|v| v.len() != nx)
            || state_bounds.iter().any(|h| h.len() != rows)
            || input_bounds.iter().any(|(l, u)| l.len() != nu || u.len() != nu)
        {
            return Err(SmpcError::Dimension("horizon data".into()));
        }
        let nvu = n * nu;
        let e0 = x0 - &reference[0];
        let mut constant = e0.dot(&(&self.q * &e0));
        let mut qe = DVector::zeros(n * nx);
        for k in 1..=n {
            let e = &free[k - 1] - &reference[k];
            let w = if k == n { &self.p_term } else { &self.q };
            let we = w * &e;
            constant += e.dot(&we);
            qe.rows_mut((k - 1) * nx, nx).copy_from(&we);
        }
        let mut q = DVector::zeros(nvu + n);
        q.rows_mut(0, nvu).copy_from(&(self.gamma.tr_mul(&qe) * 2.0));
        q.rows_mut(nvu, n).fill(self.slack_penalty);

        let m = self.num_constraints();
        let mut l = DVector::from_element(m, f64::NEG_INFINITY);
        let mut u = DVector::from_element(m, f64::INFINITY);
        for k in 1..=n {
            let rhs = &state_bounds[k - 1] - &self.h_mat * &free[k - 1];
            u.rows_mut((k - 1) * rows, rows).copy_from(&rhs);
        }
        for (k, (lo, hi)) in input_bounds.iter().enumerate() {
            l.rows_mut(n * rows + k * nu, nu).copy_from(lo);
            u.rows_mut(n * rows + k * nu, nu).copy_from(hi);
        }
        l.rows_mut(n * rows + nvu, n).fill(0.0);
        Ok((q, l, u, constant))
    }

    pub fn problem(
        &self,
        x0: &DVector<f64>,
        free: &[DVector<f64>],
        reference: &[DVector<f64>],
        state_bounds: &[DVector<f64>],
        input_bounds: &[(DVector<f64>, DVector<f64>)],
    ) -> Result<MpcProblem, SmpcError> {
        let (q, l, u, constant) = self.bounds_and_cost(x0, free, reference, state_bounds, input_bounds)?;
        let qp = QpProblem::new(self.hessian.clone(), q, self.constraints.clone(), l, u)?;
        Ok(MpcProblem { qp, constant })
    }

    pub fn inputs(&self, v: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.horizon)
            .map(|k| v.rows(k * self.nu, self.nu).into_owned())
            .collect()
    }

    pub fn slacks(&self, v: &DVector<f64>) -> DVector<f64> {
        v.rows(self.horizon * self.nu, self.horizon).into_owned()
    }

    /// Predicted states `k = 1..N` for the decision vector `v`.
    pub fn predicted_states(&self, free: &[DVector<f64>], v: &DVector<f64>) -> Vec<DVector<f64>> {
        let dx = &self.gamma * v.rows(0, self.horizon * self.nu);
        free.iter()
            .enumerate()
            .map(|(k, f)| f + dx.rows(k * self.nx, self.nx))
            .collect()
    }
}

/// Tracking cost of an input sequence by direct rollout of `ξ⁺ = A·ξ + B·u`;
/// the first `q.nrows()` components of `ξ` are the tracked state.
#[allow(clippy::too_many_arguments)]
pub fn simulate_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    xi0: &DVector<f64>,
    inputs: &[DVector<f64>],
    reference: &[DVector<f64>],
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p_term: &DMatrix<f64>,
) -> f64 {
    let nx = q.nrows();
    let n = inputs.len();
    let mut xi = xi0.clone();
    let mut cost = 0.0;
    for (k, u) in inputs.iter().enumerate() {
        let e = xi.rows(0, nx) - &reference[k];
        cost += e.dot(&(q * &e)) + u.dot(&(r * u));
        xi = a * &xi + b * u;
    }
    let e = xi.rows(0, nx) - &reference[n];
    cost + e.dot(&(p_term * &e))
}
