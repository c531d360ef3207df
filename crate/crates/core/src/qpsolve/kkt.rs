use nalgebra::DVector;

use super::QpProblem;

/// Optimality residuals of a primal/dual pair, all in the unscaled problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `‖Px + q + Aᵀy‖∞`.
    pub stationarity: f64,
    /// Largest bound violation of `Ax`.
    pub primal_infeasibility: f64,
    /// `max_i min(|y_i|, gap_i)` where `gap_i` is the distance of `(Ax)_i` to
    /// the bound selected by the sign of `y_i`; a dual of the wrong sign on
    /// an infinite bound counts as `|y_i|`.
    pub complementarity: f64,
    /// Tolerances used: `tol·(1 + scale)` with scales from the data.
    pub dual_tol: f64,
    pub primal_tol: f64,
    pub ok: bool,
}

/// Checks stationarity, primal feasibility and complementary slackness within
/// `tol` (absolute plus the same relative term).
pub fn verify_kkt(problem: &QpProblem, x: &DVector<f64>, y: &DVector<f64>, tol: f64) -> KktReport {
    let ax = &problem.a * x;
    let px = &problem.p * x;
    let aty = problem.a.tr_mul(y);
    let stationarity = (&px + &problem.q + &aty).amax();

    let mut primal_infeasibility: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..problem.m() {
        let (l, u, v, yi) = (problem.l[i], problem.u[i], ax[i], y[i]);
        primal_infeasibility = primal_infeasibility.max(l - v).max(v - u);
        let gap = if yi < 0.0 {
            v - l
        } else if yi > 0.0 {
            u - v
        } else {
            0.0
        };
        let c = if gap.is_finite() { yi.abs().min(gap.abs()) } else { yi.abs() };
        complementarity = complementarity.max(c);
    }
    let finite_bound = problem
        .l
        .iter()
        .chain(problem.u.iter())
        .filter(|v| v.is_finite())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let dual_scale = px.amax().max(aty.amax()).max(problem.q.amax());
    let primal_scale = if problem.m() > 0 {
        ax.amax().max(finite_bound)
    } else {
        0.0
    };
    let dual_tol = tol * (1.0 + dual_scale);
    let primal_tol = tol * (1.0 + primal_scale);
    let all_finite = x.iter().chain(y.iter()).all(|v| v.is_finite());
    let ok = all_finite
        && stationarity <= dual_tol
        && primal_infeasibility <= primal_tol
        && complementarity <= primal_tol.max(dual_tol);
    KktReport {
        stationarity,
        primal_infeasibility,
        complementarity,
        dual_tol,
        primal_tol,
        ok,
    }
}
