use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DVector, Vector3};

use super::{HarnessError, Reference, ScenarioConfig, WindModel};
use crate::dynamics::{integrate_truth, NormalizedInput, QuadParams, QuadState};
use crate::qpsolve::QpStatus;
use crate::smpc::MpcController;
use crate::ssgp::{GpBelief, GpModel, Hyperparams, OnlineGp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    Nominal,
    Gp,
}

impl fmt::Display for ControlMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ControlMode::Nominal => "nominal",
            ControlMode::Gp => "gp",
        })
    }
}

/// One truth-integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRecord {
    pub t: f64,
    pub state: QuadState,
    pub reference: Vector3<f64>,
    pub command: NormalizedInput,
    /// Latent force acting over the step (N).
    pub latent_force: Vector3<f64>,
    /// Latest extracted disturbance (m/s²).
    pub extracted: Vector3<f64>,
    /// GP disturbance prediction used by the current solve; NaN in nominal mode.
    pub gp_mean: Vector3<f64>,
    pub gp_std: Vector3<f64>,
    pub mode: ControlMode,
    /// Position constraint back-off at the end of the horizon (m).
    pub backoff: Vector3<f64>,
}

/// One MPC recompute.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRecord {
    pub t: f64,
    pub mode: ControlMode,
    /// Forecast, tube, tightening, condensing and solve.
    pub step: Duration,
    pub build: Duration,
    pub solve: Duration,
    pub iterations: usize,
    pub status: QpStatus,
    pub softened: bool,
    pub kkt_ok: bool,
}

/// One hyperparameter update of one GP.
#[derive(Debug, Clone, PartialEq)]
pub struct GpTraceRecord {
    pub t: f64,
    pub axis: usize,
    pub updates: usize,
    pub hyper: Hyperparams,
    pub nll: f64,
    pub accepted: bool,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FlightLog {
    pub records: Vec<LogRecord>,
    pub timings: Vec<TimingRecord>,
    pub gp_trace: Vec<GpTraceRecord>,
}

impl FlightLog {
    /// RMS Euclidean position error over all records.
    pub fn rms(&self) -> Result<f64, HarnessError> {
        let (p, r) = self.positions();
        rms_error(&p, &r)
    }

    /// Per-axis RMS position error.
    pub fn rms_axis(&self) -> Result<Vector3<f64>, HarnessError> {
        if self.records.is_empty() {
            return Err(HarnessError::EmptyLog);
        }
        let n = self.records.len() as f64;
        let sq = self.records.iter().fold(Vector3::zeros(), |acc, r| {
            let e = r.state.position - r.reference;
            acc + e.component_mul(&e)
        });
        Ok((sq / n).map(f64::sqrt))
    }

    fn positions(&self) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
        self.records.iter().map(|r| (r.state.position, r.reference)).unzip()
    }
}

/// Why an episode stopped early.
#[derive(Debug, Clone, PartialEq)]
pub enum Abort {
    SolverFault { t: f64, status: QpStatus },
    Divergence { t: f64, reason: String },
}

impl fmt::Display for Abort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Abort::SolverFault { t, status } => write!(f, "solver fault at t = {t:.3} s ({status})"),
            Abort::Divergence { t, reason } => write!(f, "divergence at t = {t:.3} s: {reason}"),
        }
    }
}

impl Abort {
    pub fn exit_code(&self) -> i32 {
        match self {
            Abort::SolverFault { .. } => 2,
            Abort::Divergence { .. } => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub rms: f64,
    pub rms_axis: Vector3<f64>,
    pub simulated: f64,
    pub switch_time: Option<f64>,
    pub solves: usize,
    pub softened: usize,
    pub max_iter: usize,
    pub kkt_failures: usize,
    /// Mean MPC step (ms) per mode; `None` if the mode never ran.
    pub mean_step_nominal: Option<f64>,
    pub mean_step_gp: Option<f64>,
    /// Mean single-GP hyperparameter update (ms).
    pub mean_gp_update: Option<f64>,
    pub final_hyper: Vec<Hyperparams>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub log: FlightLog,
    /// `None` if nothing was logged before the abort.
    pub metrics: Option<EpisodeMetrics>,
    pub abort: Option<Abort>,
}

impl Episode {
    pub fn exit_code(&self) -> i32 {
        self.abort.as_ref().map_or(0, Abort::exit_code)
    }
}

/// Average latent acceleration over an interval from the velocity residual of
/// the measured state against the nominal-model prediction.
pub fn extract_disturbance(measured: &QuadState, predicted: &QuadState, dt: f64) -> Result<Vector3<f64>, HarnessError> {
    if !(dt > 0.0) {
        return Err(HarnessError::Interval(dt));
    }
    Ok((measured.velocity - predicted.velocity) / dt)
}

/// `sqrt(mean_k ‖p_k − r_k‖²)`.
pub fn rms_error(positions: &[Vector3<f64>], reference: &[Vector3<f64>]) -> Result<f64, HarnessError> {
    if positions.is_empty() {
        return Err(HarnessError::EmptyLog);
    }
    if positions.len() != reference.len() {
        return Err(HarnessError::Config(format!(
            "{} positions against {} reference points",
            positions.len(),
            reference.len()
        )));
    }
    let sum: f64 = positions
        .iter()
        .zip(reference)
        .map(|(p, r)| (p - r).norm_squared())
        .sum();
    Ok((sum / positions.len() as f64).sqrt())
}

fn rollout(start: &QuadState, inputs: &[NormalizedInput], params: &QuadParams, substeps: usize, h: f64) -> Option<QuadState> {
    let mut s = *start;
    for u in inputs {
        for _ in 0..substeps {
            s = integrate_truth(&s, u, params, &Vector3::zeros(), h).ok()?;
        }
    }
    Some(s)
}

fn mean_ms(it: impl Iterator<Item = Duration>) -> Option<f64> {
    let (n, sum) = it.fold((0usize, 0.0), |(n, s), d| (n + 1, s + d.as_secs_f64()));
    (n > 0).then(|| 1e3 * sum / n as f64)
}

struct Learner {
    gps: Vec<OnlineGp>,
}

impl Learner {
    fn ready(&self, after: usize) -> bool {
        !self.gps.is_empty() && self.gps.iter().all(|g| g.updates() >= after)
    }

    /// Beliefs propagated to time `t` and the models they belong to.
    fn beliefs_at(&mut self, t: f64) -> Result<(Vec<GpModel>, Vec<GpBelief>), HarnessError> {
        let mut models = Vec::with_capacity(3);
        let mut beliefs = Vec::with_capacity(3);
        for g in &mut self.gps {
            let b = match g.posterior()? {
                Some((b, last)) => g.model().advance(&b, t - last),
                None => g.model().stationary_belief(),
            };
            models.push(g.model().clone());
            beliefs.push(b);
        }
        Ok((models, beliefs))
    }
}

/// Runs one closed-loop episode. Controller faults and divergence end the
/// episode early and are reported in [`Episode::abort`]; only invalid
/// configurations are returned as errors.
pub fn run_episode(cfg: &ScenarioConfig) -> Result<Episode, HarnessError> {
    cfg.validate()?;
    let mut ctrl = MpcController::new(&cfg.quad, &cfg.mpc, &cfg.qp).map_err(|e| HarnessError::Config(e.to_string()))?;
    let reference = Reference::new(&cfg.reference);
    let mut wind = WindModel::new(&cfg.wind, cfg.seed);
    let dt = cfg.mpc.dt;
    let n = cfg.mpc.horizon;
    let per_interval = cfg.ticks_per_interval();
    let substeps = cfg.substeps();
    let h = cfg.sim_dt();
    let rate = cfg.control.rate_hz;
    let ticks = (cfg.duration * rate).round() as usize;
    let limits = Vector3::from_fn(|i, _| 10.0 * cfg.mpc.state_bounds[i]);
    let mut learner = Learner {
        gps: if cfg.control.use_gp {
            (0..3)
                .map(|_| OnlineGp::new(cfg.gp, dt))
                .collect::<Result<_, _>>()?
        } else {
            Vec::new()
        },
    };

    let mut log = FlightLog::default();
    let mut state = QuadState::hover_at(reference.at(0.0).position + Vector3::from(cfg.initial_offset));
    let mut interval_start = state;
    let mut interval_inputs: Vec<NormalizedInput> = Vec::with_capacity(per_interval);
    let mut extracted = Vector3::zeros();
    let mut mode = ControlMode::Nominal;
    let mut switch_time = None;
    let mut abort = None;
    let nan = Vector3::from_element(f64::NAN);

    'ticks: for j in 0..ticks {
        let t = j as f64 / rate;
        if j > 0 && j % per_interval == 0 {
            let k = j / per_interval;
            let Some(predicted) = rollout(&interval_start, &interval_inputs, &cfg.quad, substeps, h) else {
                abort = Some(Abort::Divergence {
                    t,
                    reason: "nominal prediction is not finite".into(),
                });
                break;
            };
            extracted = extract_disturbance(&state, &predicted, dt)?;
            // the sample describes the interval that started one step ago
            let t_sample = (k - 1) as f64 * dt;
            for (axis, g) in learner.gps.iter_mut().enumerate() {
                g.push(t_sample, extracted[axis])?;
                for _ in 0..cfg.control.train_steps {
                    let start = Instant::now();
                    let Some(report) = g.train_step()? else { break };
                    log.gp_trace.push(GpTraceRecord {
                        t,
                        axis,
                        updates: g.updates(),
                        hyper: *g.hyper(),
                        nll: report.nll_after,
                        accepted: report.accepted,
                        elapsed: start.elapsed(),
                    });
                }
            }
            interval_start = state;
            interval_inputs.clear();
            if mode == ControlMode::Nominal && learner.ready(cfg.control.switch_after) {
                mode = ControlMode::Gp;
                switch_time = Some(t);
            }
        }

        let x0 = DVector::from_column_slice(state.wrapped().to_vector().as_slice());
        let refs = reference.horizon(t, dt, n);
        let step_start = Instant::now();
        let forecast = match mode {
            ControlMode::Nominal => None,
            ControlMode::Gp => {
                let (models, beliefs) = learner.beliefs_at(t)?;
                Some(ctrl.forecast(&models, &beliefs)?)
            }
        };
        let out = ctrl.solve(&x0, &refs, forecast.as_ref())?;
        let step = step_start.elapsed();
        log.timings.push(TimingRecord {
            t,
            mode,
            step,
            build: out.build_time,
            solve: out.solve_time,
            iterations: out.iterations,
            status: out.status,
            softened: out.softened,
            kkt_ok: out.kkt.ok,
        });
        if out.is_fault() {
            abort = Some(Abort::SolverFault { t, status: out.status });
            break;
        }
        let (gp_mean, gp_std) = match &forecast {
            Some(f) => (f.means[0], f.variances[0].map(|v| v.max(0.0).sqrt())),
            None => (nan, nan),
        };
        let command = out.command;
        interval_inputs.push(command);

        for s in 0..substeps {
            let ts = (j * substeps + s) as f64 * h;
            let force = wind.force(&state);
            log.records.push(LogRecord {
                t: ts,
                state,
                reference: reference.at(ts).position,
                command,
                latent_force: force,
                extracted,
                gp_mean,
                gp_std,
                mode,
                backoff: out.backoff,
            });
            match integrate_truth(&state, &command, &cfg.quad, &force, h) {
                Ok(next) => state = next,
                Err(_) => {
                    abort = Some(Abort::Divergence {
                        t: ts + h,
                        reason: "state is not finite".into(),
                    });
                    break 'ticks;
                }
            }
            wind.step(h);
            if (0..3).any(|i| state.position[i].abs() > limits[i]) {
                abort = Some(Abort::Divergence {
                    t: ts + h,
                    reason: format!("position {:?} beyond 10x bounds", state.position.as_slice()),
                });
                break 'ticks;
            }
        }
    }

    let metrics = if log.records.is_empty() {
        None
    } else {
        let timings = &log.timings;
        Some(EpisodeMetrics {
            rms: log.rms()?,
            rms_axis: log.rms_axis()?,
            simulated: log.records.len() as f64 * h,
            switch_time,
            solves: timings.len(),
            softened: timings.iter().filter(|r| r.softened).count(),
            max_iter: timings.iter().filter(|r| r.status == QpStatus::MaxIter).count(),
            kkt_failures: timings.iter().filter(|r| !r.kkt_ok).count(),
            mean_step_nominal: mean_ms(timings.iter().filter(|r| r.mode == ControlMode::Nominal).map(|r| r.step)),
            mean_step_gp: mean_ms(timings.iter().filter(|r| r.mode == ControlMode::Gp).map(|r| r.step)),
            mean_gp_update: mean_ms(log.gp_trace.iter().map(|r| r.elapsed)),
            final_hyper: learner.gps.iter().map(|g| *g.hyper()).collect(),
        })
    };
    Ok(Episode { log, metrics, abort })
}
