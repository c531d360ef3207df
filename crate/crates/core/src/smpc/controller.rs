use std::time::{Duration, Instant};

use nalgebra::{DVector, Vector3, Vector4};

use super::{
    disturbance_forecast, dlqr, normal_quantile, probability_level, propagate_uncertainty, tighten,
    tighten_box, CondensedPredictor, DisturbanceForecast, Lqr, MpcConfig, Polytope, SmpcError,
    UncertaintyTube,
};
use crate::dynamics::{
    discretize_exact, linearize_hover, DiscreteModel, LinearModel, NormalizedInput, QuadParams,
};
use crate::qpsolve::{verify_kkt, KktReport, QpProblem, QpSettings, QpSolution, QpStatus, QpWorkspace};
use crate::ssgp::{GpBelief, GpModel};

/// Tolerance of the post-solve KKT check.
pub const KKT_TOL: f64 = 1e-5;

/// Result of one MPC solve.
#[derive(Debug, Clone)]
pub struct MpcOutput {
    /// First input as a deviation from trim.
    pub u_dev: DVector<f64>,
    /// Actuator command `u_dev + trim`, clipped to the physical range.
    pub command: NormalizedInput,
    pub inputs: Vec<DVector<f64>>,
    pub slacks: DVector<f64>,
    /// Predicted states for `k = 1..N`.
    pub predicted: Vec<DVector<f64>>,
    pub status: QpStatus,
    /// ADMM iterations over both stages.
    pub iterations: usize,
    pub polished: bool,
    /// The slack-softened problem had to be solved.
    pub softened: bool,
    /// Full horizon cost including the constant part and slack penalty.
    pub objective: f64,
    pub kkt: KktReport,
    pub tube: Option<UncertaintyTube>,
    /// Position back-off `Φ⁻¹(p̄)·σ` at the end of the horizon.
    pub backoff: Vector3<f64>,
    /// Tube, tightening and condensing.
    pub build_time: Duration,
    pub solve_time: Duration,
}

impl MpcOutput {
    /// Infeasibility certificate or non-finite output.
    pub fn is_fault(&self) -> bool {
        self.status == QpStatus::PrimalInfeasible || self.u_dev.iter().any(|v| !v.is_finite())
    }
}

/// Receding-horizon controller. Nominal mode solves the certainty-equivalent
/// problem; with a disturbance forecast it predicts with the augmented model
/// and tightens constraints along the LQR tube. Both modes share one QP
/// structure, so the solver workspaces are reused across steps.
///
/// Each step first solves the hard-constrained problem. Its solution is
/// optimal for the slack-softened problem when, at every horizon step, the
/// state-row multipliers sum to at most the slack penalty; only otherwise is
/// the softened problem solved directly.
#[derive(Debug, Clone)]
pub struct MpcController {
    config: MpcConfig,
    linear: LinearModel,
    model: DiscreteModel,
    lqr: Lqr,
    predictor: CondensedPredictor,
    hard: QpWorkspace,
    soft: QpWorkspace,
    state_set: Polytope,
    input_lo: DVector<f64>,
    input_hi: DVector<f64>,
    z_u: f64,
    warm_start: bool,
}

impl MpcController {
    pub fn new(params: &QuadParams, config: &MpcConfig, qp_settings: &QpSettings) -> Result<Self, SmpcError> {
        config.validate()?;
        params.validate()?;
        let mut linear = linearize_hover(params);
        if let Some(u) = config.u_hover {
            linear.trim.0[0] = u;
        }
        let model = discretize_exact(&linear, config.dt)?;
        let q = config.q_matrix();
        let r = config.r_matrix();
        let lqr = dlqr(&model.ad, &model.bd, &q, &r)?;
        let state_set = config.state_set();
        let predictor = CondensedPredictor::new(
            &model.ad,
            &model.bd,
            &q,
            &r,
            &lqr.p,
            &state_set,
            config.horizon,
            config.slack_penalty,
        )?;
        let (input_lo, input_hi) = config.input_box(linear.trim.0[0]);
        let z_u = normal_quantile(probability_level(config.p_u, input_lo.len())?)?;
        let n = config.horizon;
        let x0 = DVector::zeros(linear.a.nrows());
        let problem = predictor.problem(
            &x0,
            &predictor.free_response(&x0),
            &vec![x0.clone(); n + 1],
            &vec![state_set.h.clone(); n],
            &vec![(input_lo.clone(), input_hi.clone()); n],
        )?;
        let hard = QpWorkspace::new(predictor.hard_problem(&problem.qp)?, qp_settings.clone())?;
        let soft = QpWorkspace::new(problem.qp, qp_settings.clone())?;
        Ok(Self {
            config: config.clone(),
            linear,
            model,
            lqr,
            predictor,
            hard,
            soft,
            state_set,
            input_lo,
            input_hi,
            z_u,
            warm_start: true,
        })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn linear(&self) -> &LinearModel {
        &self.linear
    }

    pub fn model(&self) -> &DiscreteModel {
        &self.model
    }

    pub fn lqr(&self) -> &Lqr {
        &self.lqr
    }

    pub fn predictor(&self) -> &CondensedPredictor {
        &self.predictor
    }

    pub fn state_set(&self) -> &Polytope {
        &self.state_set
    }

    pub fn trim(&self) -> NormalizedInput {
        self.linear.trim
    }

    /// Softened QP of the most recent solve.
    pub fn last_problem(&self) -> &QpProblem {
        self.soft.problem()
    }

    pub fn set_warm_start(&mut self, on: bool) {
        self.warm_start = on;
    }

    /// Forecast over this controller's horizon from GP beliefs valid now.
    pub fn forecast(&self, gps: &[GpModel], beliefs: &[GpBelief]) -> Result<DisturbanceForecast, SmpcError> {
        disturbance_forecast(&self.linear, gps, beliefs, self.config.horizon, self.config.dt)
    }

    /// Solves for the measured state `x0` and the references `r_0..r_N`.
    pub fn solve(
        &mut self,
        x0: &DVector<f64>,
        reference: &[DVector<f64>],
        forecast: Option<&DisturbanceForecast>,
    ) -> Result<MpcOutput, SmpcError> {
        let start = Instant::now();
        let n = self.config.horizon;
        let nx = self.linear.a.nrows();
        if x0.len() != nx || x0.iter().any(|v| !v.is_finite()) {
            return Err(SmpcError::Dimension("initial state".into()));
        }
        let (free, state_bounds, input_bounds, tube) = match forecast {
            None => (
                self.predictor.free_response(x0),
                vec![self.state_set.h.clone(); n],
                vec![(self.input_lo.clone(), self.input_hi.clone()); n],
                None,
            ),
            Some(f) => self.tightened(x0, f)?,
        };
        let (q, l, u, constant) =
            self.predictor
                .bounds_and_cost(x0, &free, reference, &state_bounds, &input_bounds)?;
        let nvu = n * self.predictor.nu;
        let mh = self.predictor.hard_rows();
        self.soft.update_q(&q)?;
        self.soft.update_bounds(&l, &u)?;
        self.hard.update_q(&q.rows(0, nvu).into_owned())?;
        self.hard
            .update_bounds(&l.rows(0, mh).into_owned(), &u.rows(0, mh).into_owned())?;
        if !self.warm_start {
            self.hard.cold_start();
            self.soft.cold_start();
        }
        let build_time = start.elapsed();

        let solve_start = Instant::now();
        let first = self.hard.solve();
        let (sol, softened) = match self.lift(&first) {
            Some(sol) => (sol, false),
            None => {
                if first.x.iter().all(|v| v.is_finite()) {
                    let mut x = DVector::zeros(self.predictor.num_vars());
                    x.rows_mut(0, nvu).copy_from(&first.x);
                    let y = DVector::zeros(self.soft.problem().m());
                    self.soft.warm_start(&x, &y)?;
                }
                let mut sol = self.soft.solve();
                sol.iterations += first.iterations;
                (sol, true)
            }
        };
        let solve_time = solve_start.elapsed();
        if sol.status != QpStatus::Solved || sol.x.iter().any(|v| !v.is_finite()) {
            self.hard.cold_start();
            self.soft.cold_start();
        }

        let kkt = verify_kkt(self.soft.problem(), &sol.x, &sol.y, KKT_TOL);
        let inputs = self.predictor.inputs(&sol.x);
        let u_dev = inputs[0].clone();
        let trim = self.linear.trim.0;
        let command = NormalizedInput(Vector4::from_fn(|i, _| u_dev[i] + trim[i])).saturated();
        let backoff = match &tube {
            Some(t) => {
                let z = normal_quantile(probability_level(self.config.p_x, nx)?)?;
                let s = &t.sigma_x[n];
                Vector3::from_fn(|i, _| z * s[(i, i)].max(0.0).sqrt())
            }
            None => Vector3::zeros(),
        };
        Ok(MpcOutput {
            u_dev,
            command,
            slacks: self.predictor.slacks(&sol.x),
            predicted: self.predictor.predicted_states(&free, &sol.x),
            inputs,
            status: sol.status,
            iterations: sol.iterations,
            polished: sol.polished,
            softened,
            objective: sol.objective + constant,
            kkt,
            tube,
            backoff,
            build_time,
            solve_time,
        })
    }

    /// Extends a solution of the hard problem to the softened one with zero
    /// slack, if that is optimal there.
    fn lift(&self, hard: &QpSolution) -> Option<QpSolution> {
        if hard.status != QpStatus::Solved || hard.x.iter().chain(hard.y.iter()).any(|v| !v.is_finite()) {
            return None;
        }
        let n = self.config.horizon;
        let rows = self.predictor.state_rows();
        let mh = self.predictor.hard_rows();
        let nvu = hard.x.len();
        let mut x = DVector::zeros(nvu + n);
        x.rows_mut(0, nvu).copy_from(&hard.x);
        let mut y = DVector::zeros(mh + n);
        y.rows_mut(0, mh).copy_from(&hard.y);
        for k in 0..n {
            let pressure = hard.y.rows(k * rows, rows).sum();
            if pressure > self.config.slack_penalty {
                return None;
            }
            // stationarity in s_k: penalty − Σ_j y_kj + y_k = 0
            y[mh + k] = pressure - self.config.slack_penalty;
        }
        let objective = self.soft.problem().objective(&x);
        Some(QpSolution {
            x,
            y,
            objective,
            ..hard.clone()
        })
    }

    #[allow(clippy::type_complexity)]
    fn tightened(
        &self,
        x0: &DVector<f64>,
        f: &DisturbanceForecast,
    ) -> Result<
        (
            Vec<DVector<f64>>,
            Vec<DVector<f64>>,
            Vec<(DVector<f64>, DVector<f64>)>,
            Option<UncertaintyTube>,
        ),
        SmpcError,
    > {
        let n = self.config.horizon;
        let nx = self.linear.a.nrows();
        let aug = &f.model;
        if aug.nx != nx || (aug.dt - self.config.dt).abs() > 1e-12 || f.variances.len() < n {
            return Err(SmpcError::Dimension("forecast does not match the controller".into()));
        }
        let mut xi = aug.stack(x0, &f.gp_states)?;
        let mut free = Vec::with_capacity(n);
        for _ in 0..n {
            xi = &aug.a * xi;
            free.push(xi.rows(0, nx).into_owned());
        }
        let tube = propagate_uncertainty(
            &self.model.ad,
            &self.model.bd,
            &self.lqr.k,
            &aug.coupling_d,
            &f.variances,
            n,
        )?;
        let mut state_bounds = Vec::with_capacity(n);
        for s in &tube.sigma_x[1..] {
            state_bounds.push(tighten(&self.state_set, s, self.config.p_x, nx)?.h);
        }
        let input_bounds = tube
            .sigma_u
            .iter()
            .map(|s| tighten_box(&self.input_lo, &self.input_hi, s, self.z_u))
            .collect();
        Ok((free, state_bounds, input_bounds, Some(tube)))
    }
}
