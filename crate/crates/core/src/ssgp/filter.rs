use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

use super::spectral::ContinuousGp;
use super::{GpError, Hyperparams};

/// Discretized GP: continuous realization plus its transition over `dt`.
#[derive(Debug, Clone)]
pub struct GpModel {
    pub continuous: ContinuousGp,
    pub dt: f64,
    /// `exp(F·dt)`.
    pub f_bar: DMatrix<f64>,
    /// `P∞ − F̄·P∞·F̄ᵀ`.
    pub q_bar: DMatrix<f64>,
}

/// Gaussian belief over the GP state.
#[derive(Debug, Clone, PartialEq)]
pub struct GpBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

/// Predicted GP output: mean and variance (including measurement noise).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputPrediction {
    pub mean: f64,
    pub variance: f64,
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

impl GpModel {
    pub fn discretize(continuous: ContinuousGp, dt: f64) -> Result<Self, GpError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(GpError::InvalidStep(dt));
        }
        let (f_bar, q_bar) = transition(&continuous, dt);
        Ok(Self {
            continuous,
            dt,
            f_bar,
            q_bar,
        })
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.continuous.hyper
    }

    pub fn order(&self) -> usize {
        self.continuous.order
    }

    pub fn noise_variance(&self) -> f64 {
        self.continuous.hyper.noise_variance
    }

    /// The exact GP prior: zero mean, stationary covariance.
    pub fn stationary_belief(&self) -> GpBelief {
        GpBelief {
            mean: DVector::zeros(self.order()),
            cov: self.continuous.p_inf.clone(),
        }
    }

    pub fn predict(&self, belief: &GpBelief) -> GpBelief {
        let mut cov = &self.f_bar * &belief.cov * self.f_bar.transpose() + &self.q_bar;
        symmetrize(&mut cov);
        GpBelief {
            mean: &self.f_bar * &belief.mean,
            cov,
        }
    }

    /// Propagates the belief over an arbitrary horizon `delta ≥ 0`.
    pub fn advance(&self, belief: &GpBelief, delta: f64) -> GpBelief {
        if delta <= 0.0 {
            return belief.clone();
        }
        let (phi, q) = transition(&self.continuous, delta);
        let mut cov = &phi * &belief.cov * phi.transpose() + q;
        symmetrize(&mut cov);
        GpBelief {
            mean: &phi * &belief.mean,
            cov,
        }
    }

    /// Measurement update with `y = H·z + v`; returns the posterior and the
    /// log-density of the innovation.
    pub fn correct(&self, prior: &GpBelief, y: f64) -> Result<(GpBelief, f64), GpError> {
        let n = self.order();
        let r = self.noise_variance();
        // H = e₁ᵀ, so H·P is the first row of P
        let ph: DVector<f64> = prior.cov.column(0).into_owned();
        let s = ph[0] + r;
        if !(s > 0.0) || !s.is_finite() {
            return Err(GpError::InnovationVariance(s));
        }
        let innovation = y - prior.mean[0];
        let gain = &ph / s;
        let mean = &prior.mean + &gain * innovation;
        // Joseph form: (I − K·H)·P·(I − K·H)ᵀ + K·R·Kᵀ
        let mut ikh = DMatrix::<f64>::identity(n, n);
        for i in 0..n {
            ikh[(i, 0)] -= gain[i];
        }
        let mut cov = &ikh * &prior.cov * ikh.transpose() + &gain * gain.transpose() * r;
        symmetrize(&mut cov);
        let ll = -0.5 * ((2.0 * PI * s).ln() + innovation * innovation / s);
        Ok((GpBelief { mean, cov }, ll))
    }

    /// Predict one step, then correct with `y`.
    pub fn kalman_update(&self, belief: &GpBelief, y: f64) -> Result<(GpBelief, f64), GpError> {
        let prior = self.predict(belief);
        self.correct(&prior, y)
    }

    /// Output distribution of a belief, with measurement noise included.
    pub fn output(&self, belief: &GpBelief) -> OutputPrediction {
        OutputPrediction {
            mean: belief.mean[0],
            variance: belief.cov[(0, 0)] + self.noise_variance(),
        }
    }
}

/// `(exp(F·δ), P∞ − exp(F·δ)·P∞·exp(F·δ)ᵀ)`.
fn transition(gp: &ContinuousGp, delta: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let phi = (&gp.f * delta).exp();
    let mut q = &gp.p_inf - &phi * &gp.p_inf * phi.transpose();
    symmetrize(&mut q);
    (phi, q)
}

/// Open-loop mean/covariance propagation for `steps` steps; entry `k−1`
/// holds the output prediction `k` steps ahead.
pub fn predict_horizon(belief: &GpBelief, model: &GpModel, steps: usize) -> Vec<OutputPrediction> {
    let mut out = Vec::with_capacity(steps);
    let mut b = belief.clone();
    for _ in 0..steps {
        b = model.predict(&b);
        out.push(model.output(&b));
    }
    out
}
