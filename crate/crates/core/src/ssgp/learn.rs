use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::f64::consts::PI;
use std::sync::Arc;

use super::filter::{symmetrize, GpBelief, GpModel};
use super::spectral::{ContinuousGp, UnitFactor};
use super::{GpError, Hyperparams};

/// Sliding window of uniformly spaced samples `(t_i, y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    dt: f64,
    capacity: usize,
    samples: VecDeque<(f64, f64)>,
}

const SPACING_TOL: f64 = 1e-9;

impl TrainingBatch {
    pub fn new(dt: f64, capacity: usize) -> Result<Self, GpError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(GpError::InvalidStep(dt));
        }
        Ok(Self {
            dt,
            capacity: capacity.max(1),
            samples: VecDeque::with_capacity(capacity),
        })
    }

    pub fn from_samples(dt: f64, samples: &[(f64, f64)]) -> Result<Self, GpError> {
        let mut b = Self::new(dt, samples.len().max(1))?;
        for &(t, y) in samples {
            b.push(t, y)?;
        }
        Ok(b)
    }

    /// Appends a sample, evicting the oldest when full.
    pub fn push(&mut self, t: f64, y: f64) -> Result<(), GpError> {
        if let Some(&(prev, _)) = self.samples.back() {
            if !((t - prev - self.dt).abs() <= SPACING_TOL) {
                return Err(GpError::NonUniformBatch {
                    t,
                    prev,
                    dt: self.dt,
                });
            }
        }
        if self.samples.len() == self.capacity {
            self.samples.pop_front();
        }
        self.samples.push_back((t, y));
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn last_time(&self) -> Option<f64> {
        self.samples.back().map(|s| s.0)
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.1)
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.samples.iter().copied()
    }
}

/// Runs the filter from the stationary prior over the batch; returns the
/// posterior at the last sample and the log marginal likelihood.
pub fn filter_batch(model: &GpModel, batch: &TrainingBatch) -> Result<(GpBelief, f64), GpError> {
    let mut belief = model.stationary_belief();
    let mut ll = 0.0;
    for y in batch.values() {
        let (b, inc) = model.kalman_update(&belief, y)?;
        belief = b;
        ll += inc;
    }
    Ok((belief, ll))
}

fn model_for(
    factor: &Arc<UnitFactor>,
    hyper: &Hyperparams,
    dt: f64,
) -> Result<GpModel, GpError> {
    GpModel::discretize(ContinuousGp::from_factor(factor, hyper)?, dt)
}

pub(crate) fn nll_with(
    factor: &Arc<UnitFactor>,
    batch: &TrainingBatch,
    hyper: &Hyperparams,
) -> Result<f64, GpError> {
    let model = model_for(factor, hyper, batch.dt())?;
    let (_, ll) = filter_batch(&model, batch)?;
    if ll.is_finite() {
        Ok(-ll)
    } else {
        Err(GpError::NonFiniteLikelihood(*hyper))
    }
}

pub fn negative_log_likelihood(
    batch: &TrainingBatch,
    hyper: &Hyperparams,
    order: usize,
) -> Result<f64, GpError> {
    nll_with(&Arc::new(UnitFactor::new(order)?), batch, hyper)
}

/// Negative log marginal likelihood and its gradient with respect to
/// `(ln σ_m², ln l, ln σ_n²)`, by forward sensitivities of the filter.
pub fn nll_gradient(
    batch: &TrainingBatch,
    hyper: &Hyperparams,
    order: usize,
) -> Result<(f64, [f64; 3]), GpError> {
    nll_gradient_with(&Arc::new(UnitFactor::new(order)?), batch, hyper)
}

pub(crate) fn nll_gradient_with(
    factor: &Arc<UnitFactor>,
    batch: &TrainingBatch,
    hyper: &Hyperparams,
) -> Result<(f64, [f64; 3]), GpError> {
    if batch.len() < 2 {
        return Err(GpError::BatchTooShort {
            needed: 2,
            got: batch.len(),
        });
    }
    let model = model_for(factor, hyper, batch.dt())?;
    let n = model.order();
    let dt = model.dt;
    let f_bar = &model.f_bar;
    let p_inf = &model.continuous.p_inf;
    let r = hyper.noise_variance;

    // Parameter derivatives of the discrete model. F = (2/l)·F̂, so
    // ∂F/∂ln l = −F; P∞ ∝ σ_m² and is independent of l in this realization.
    let zero = DMatrix::<f64>::zeros(n, n);
    let df_len = -(&model.continuous.f * f_bar) * dt;
    let d_fbar = [zero.clone(), df_len.clone(), zero.clone()];
    let d_pinf = [p_inf.clone(), zero.clone(), zero.clone()];
    let dq_len = {
        let t = &df_len * p_inf * f_bar.transpose();
        let mut m = -(&t + t.transpose());
        symmetrize(&mut m);
        m
    };
    let d_qbar = [model.q_bar.clone(), dq_len, zero.clone()];
    let d_r = [0.0, 0.0, r];

    let mut m = DVector::<f64>::zeros(n);
    let mut p = p_inf.clone();
    let mut dm: [DVector<f64>; 3] = std::array::from_fn(|_| DVector::zeros(n));
    let mut dp: [DMatrix<f64>; 3] = d_pinf;

    let mut ll = 0.0;
    let mut grad = [0.0; 3];
    for y in batch.values() {
        // predict
        let m_pred = f_bar * &m;
        let mut p_pred = f_bar * &p * f_bar.transpose() + &model.q_bar;
        symmetrize(&mut p_pred);
        let mut dm_pred: [DVector<f64>; 3] = std::array::from_fn(|_| DVector::zeros(n));
        let mut dp_pred: [DMatrix<f64>; 3] = std::array::from_fn(|_| DMatrix::zeros(n, n));
        for j in 0..3 {
            dm_pred[j] = &d_fbar[j] * &m + f_bar * &dm[j];
            let cross = &d_fbar[j] * &p * f_bar.transpose();
            dp_pred[j] = &cross + cross.transpose() + f_bar * &dp[j] * f_bar.transpose() + &d_qbar[j];
        }

        // correct
        let s = p_pred[(0, 0)] + r;
        if !(s > 0.0) || !s.is_finite() {
            return Err(GpError::InnovationVariance(s));
        }
        let v = y - m_pred[0];
        let ph: DVector<f64> = p_pred.column(0).into_owned();
        let k = &ph / s;
        ll += -0.5 * ((2.0 * PI * s).ln() + v * v / s);

        let mut next_dm: [DVector<f64>; 3] = std::array::from_fn(|_| DVector::zeros(n));
        let mut next_dp: [DMatrix<f64>; 3] = std::array::from_fn(|_| DMatrix::zeros(n, n));
        for j in 0..3 {
            let ds = dp_pred[j][(0, 0)] + d_r[j];
            let dv = -dm_pred[j][0];
            grad[j] += -0.5 * (ds / s + 2.0 * v * dv / s - v * v * ds / (s * s));
            let dph: DVector<f64> = dp_pred[j].column(0).into_owned();
            let dk = (&dph - &k * ds) / s;
            next_dm[j] = &dm_pred[j] + &dk * v + &k * dv;
            // P = P⁻ − K·S·Kᵀ
            let t = &dk * k.transpose() * s;
            let mut d = &dp_pred[j] - &t - t.transpose() - &k * k.transpose() * ds;
            symmetrize(&mut d);
            next_dp[j] = d;
        }
        dm = next_dm;
        dp = next_dp;

        m = &m_pred + &k * v;
        let mut ikh = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            ikh[(i, 0)] -= k[i];
        }
        p = &ikh * &p_pred * ikh.transpose() + &k * k.transpose() * r;
        symmetrize(&mut p);
    }

    let nll = -ll;
    let grad = grad.map(|g| -g);
    if !nll.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(GpError::NonFiniteLikelihood(*hyper));
    }
    Ok((nll, grad))
}

/// One log-space ascent step on the log likelihood, i.e. `θ' = θ − η ⊙ ∇NLL`.
pub fn hyper_step(
    hyper: &Hyperparams,
    nll_grad: &[f64; 3],
    eta: &[f64; 3],
) -> Result<Hyperparams, GpError> {
    let theta = hyper.to_log();
    let next: [f64; 3] = std::array::from_fn(|i| theta[i] - eta[i] * nll_grad[i]);
    let h = Hyperparams::from_log(next);
    h.validate().map_err(|_| GpError::NonFiniteStep(*hyper))?;
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    /// Taylor order of the spectral approximation.
    pub order: usize,
    /// Learning rates for `(ln σ_m², ln l, ln σ_n²)`.
    pub learning_rate: [f64; 3],
    pub batch_size: usize,
    pub initial: Hyperparams,
    /// Box in which the hyperparameters are kept.
    pub lower: Hyperparams,
    pub upper: Hyperparams,
    /// Learning-rate halvings tried before a step is rejected.
    pub max_halvings: u32,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            order: 6,
            learning_rate: [0.03, 0.01, 0.005],
            batch_size: 50,
            initial: Hyperparams::new(1.0, 1.0, 0.1),
            lower: Hyperparams::new(1e-6, 0.05, 1e-6),
            upper: Hyperparams::new(1e3, 50.0, 1e3),
            max_halvings: 10,
        }
    }
}

impl GpConfig {
    fn clamp(&self, h: &Hyperparams) -> Hyperparams {
        Hyperparams::new(
            h.signal_variance
                .clamp(self.lower.signal_variance, self.upper.signal_variance),
            h.length_scale
                .clamp(self.lower.length_scale, self.upper.length_scale),
            h.noise_variance
                .clamp(self.lower.noise_variance, self.upper.noise_variance),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub nll_before: f64,
    pub nll_after: f64,
    pub accepted: bool,
    pub halvings: u32,
}

/// A GP that learns its hyperparameters online from a sliding window.
#[derive(Debug, Clone)]
pub struct OnlineGp {
    config: GpConfig,
    factor: Arc<UnitFactor>,
    model: GpModel,
    batch: TrainingBatch,
    updates: usize,
    posterior: Option<GpBelief>,
}

impl OnlineGp {
    pub fn new(config: GpConfig, dt: f64) -> Result<Self, GpError> {
        let factor = Arc::new(UnitFactor::new(config.order)?);
        let initial = config.clamp(&config.initial);
        let model = model_for(&factor, &initial, dt)?;
        Ok(Self {
            config,
            factor,
            model,
            batch: TrainingBatch::new(dt, config.batch_size)?,
            updates: 0,
            posterior: None,
        })
    }

    pub fn push(&mut self, t: f64, y: f64) -> Result<(), GpError> {
        self.batch.push(t, y)?;
        self.posterior = None;
        Ok(())
    }

    pub fn hyper(&self) -> &Hyperparams {
        self.model.hyper()
    }

    pub fn model(&self) -> &GpModel {
        &self.model
    }

    pub fn batch(&self) -> &TrainingBatch {
        &self.batch
    }

    /// Number of hyperparameter update steps performed.
    pub fn updates(&self) -> usize {
        self.updates
    }

    /// One gradient step on the current window. Returns `None` when the
    /// window is too short to train on.
    pub fn train_step(&mut self) -> Result<Option<StepReport>, GpError> {
        if self.batch.len() < 2 {
            return Ok(None);
        }
        let current = *self.model.hyper();
        let (nll, grad) = nll_gradient_with(&self.factor, &self.batch, &current)?;
        let mut eta = self.config.learning_rate;
        let mut report = StepReport {
            nll_before: nll,
            nll_after: nll,
            accepted: false,
            halvings: 0,
        };
        for attempt in 0..=self.config.max_halvings {
            report.halvings = attempt;
            let candidate = hyper_step(&current, &grad, &eta)
                .map(|h| self.config.clamp(&h))
                .and_then(|h| Ok((h, nll_with(&self.factor, &self.batch, &h)?)));
            if let Ok((h, cand_nll)) = candidate {
                if cand_nll <= nll {
                    self.model = model_for(&self.factor, &h, self.batch.dt())?;
                    report.nll_after = cand_nll;
                    report.accepted = true;
                    break;
                }
            }
            eta = eta.map(|e| 0.5 * e);
        }
        self.updates += 1;
        self.posterior = None;
        Ok(Some(report))
    }

    /// Filtered belief at the newest sample, with that sample's timestamp.
    pub fn posterior(&mut self) -> Result<Option<(GpBelief, f64)>, GpError> {
        let Some(last) = self.batch.last_time() else {
            return Ok(None);
        };
        if self.posterior.is_none() {
            self.posterior = Some(filter_batch(&self.model, &self.batch)?.0);
        }
        Ok(self.posterior.clone().map(|b| (b, last)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batch_enforces_spacing_and_capacity() {
        let mut b = TrainingBatch::new(0.1, 3).unwrap();
        for k in 0..5 {
            b.push(k as f64 * 0.1, k as f64).unwrap();
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.values().collect::<Vec<_>>(), vec![2.0, 3.0, 4.0]);
        assert!(matches!(
            b.push(0.75, 0.0),
            Err(GpError::NonUniformBatch { .. })
        ));
        assert!(b.push(0.3, 0.0).is_err());
    }

    #[test]
    fn zero_gradient_leaves_hyper() {
        let h = Hyperparams::new(0.7, 1.1, 0.02);
        let out = hyper_step(&h, &[0.0; 3], &[0.03, 0.01, 0.005]).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn overflowing_step_is_an_error() {
        let h = Hyperparams::default();
        assert!(matches!(
            hyper_step(&h, &[-1e6, 0.0, 0.0], &[1.0, 1.0, 1.0]),
            Err(GpError::NonFiniteStep(_))
        ));
    }

    #[test]
    fn gradient_needs_two_samples() {
        let b = TrainingBatch::from_samples(0.1, &[(0.0, 1.0)]).unwrap();
        assert!(matches!(
            nll_gradient(&b, &Hyperparams::default(), 6),
            Err(GpError::BatchTooShort { .. })
        ));
    }

    #[test]
    fn online_gp_counts_updates() {
        let mut gp = OnlineGp::new(GpConfig::default(), 0.1).unwrap();
        assert_eq!(gp.train_step().unwrap(), None);
        for k in 0..10 {
            gp.push(k as f64 * 0.1, (k as f64 * 0.2).sin()).unwrap();
        }
        for _ in 0..5 {
            let r = gp.train_step().unwrap().unwrap();
            assert!(r.nll_after <= r.nll_before);
        }
        assert_eq!(gp.updates(), 5);
        let (_, t) = gp.posterior().unwrap().unwrap();
        assert!((t - 0.9).abs() < 1e-12);
    }
}
