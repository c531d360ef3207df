//! State-space Gaussian-process regression for scalar time series.
//!
//! A squared-exponential GP `k(τ) = σ_m²·exp(−τ²/l²)` is approximated by a
//! finite-order LTI system driven by white noise. Inference then runs as a
//! Kalman filter in O(n) per batch, and the marginal-likelihood gradient is
//! obtained by propagating forward sensitivities through the same recursion.
//!
//! Realization: the stable spectral factor of the Taylor-approximated
//! spectrum is computed once per order in time units where `l = 2`. For a
//! given length-scale the dynamics matrix is the unit companion matrix
//! scaled by `c = 2/l`, so every covariance stays O(σ_m²) regardless of `l`.

mod filter;
mod learn;
mod spectral;

pub use filter::{predict_horizon, GpBelief, GpModel, OutputPrediction};
pub use learn::{
    filter_batch, hyper_step, negative_log_likelihood, nll_gradient, GpConfig, OnlineGp,
    StepReport, TrainingBatch,
};
pub use spectral::{
    build_lti, se_kernel, se_spectral_density, stationary_covariance, ContinuousGp, UnitFactor,
};

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GpError {
    #[error("invalid hyperparameters {0}: all must be finite and strictly positive")]
    InvalidHyper(Hyperparams),
    #[error("approximation order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("spectral factorization failed for order {order}: {reason}")]
    Factorization { order: usize, reason: String },
    #[error("dynamics matrix is not Hurwitz (max real eigenvalue {0:e})")]
    NotHurwitz(f64),
    #[error("singular Lyapunov system")]
    SingularLyapunov,
    #[error("sampling step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("innovation variance {0:e} is not positive")]
    InnovationVariance(f64),
    #[error("non-finite likelihood at {0}")]
    NonFiniteLikelihood(Hyperparams),
    #[error("non-finite hyperparameter step from {0}")]
    NonFiniteStep(Hyperparams),
    #[error("sample at t={t} breaks uniform spacing {dt} (previous t={prev})")]
    NonUniformBatch { t: f64, prev: f64, dt: f64 },
    #[error("batch needs at least {needed} samples, has {got}")]
    BatchTooShort { needed: usize, got: usize },
    #[error("malformed hyperparameter snapshot: {0}")]
    Snapshot(String),
}

/// Squared-exponential kernel hyperparameters plus measurement-noise variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    /// σ_m² (output units²).
    pub signal_variance: f64,
    /// l (s).
    pub length_scale: f64,
    /// σ_n² (output units²).
    pub noise_variance: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            signal_variance: 1.0,
            length_scale: 1.0,
            noise_variance: 0.1,
        }
    }
}

impl Hyperparams {
    pub fn new(signal_variance: f64, length_scale: f64, noise_variance: f64) -> Self {
        Self {
            signal_variance,
            length_scale,
            noise_variance,
        }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        let ok = [self.signal_variance, self.length_scale, self.noise_variance]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(GpError::InvalidHyper(*self))
        }
    }

    /// `(ln σ_m², ln l, ln σ_n²)`.
    pub fn to_log(&self) -> [f64; 3] {
        [
            self.signal_variance.ln(),
            self.length_scale.ln(),
            self.noise_variance.ln(),
        ]
    }

    pub fn from_log(theta: [f64; 3]) -> Self {
        Self::new(theta[0].exp(), theta[1].exp(), theta[2].exp())
    }

    /// Plain-text `key = value` snapshot, one per line.
    pub fn to_snapshot(&self) -> String {
        format!(
            "signal_variance = {:e}\nlength_scale = {:e}\nnoise_variance = {:e}\n",
            self.signal_variance, self.length_scale, self.noise_variance
        )
    }

    pub fn from_snapshot(text: &str) -> Result<Self, GpError> {
        let mut vals: [Option<f64>; 3] = [None; 3];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| GpError::Snapshot(format!("no '=' in {line:?}")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| GpError::Snapshot(format!("bad number in {line:?}")))?;
            let slot = match key.trim() {
                "signal_variance" => 0,
                "length_scale" => 1,
                "noise_variance" => 2,
                other => return Err(GpError::Snapshot(format!("unknown key {other:?}"))),
            };
            vals[slot] = Some(value);
        }
        match vals {
            [Some(a), Some(b), Some(c)] => {
                let h = Self::new(a, b, c);
                h.validate()?;
                Ok(h)
            }
            _ => Err(GpError::Snapshot("missing key".into())),
        }
    }
}

impl fmt::Display for Hyperparams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(σ_m²={:.6e}, l={:.6e}, σ_n²={:.6e})",
            self.signal_variance, self.length_scale, self.noise_variance
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_roundtrip() {
        let h = Hyperparams::new(0.25, 3.5, 1e-3);
        let back = Hyperparams::from_snapshot(&h.to_snapshot()).unwrap();
        assert_eq!(h, back);
    }

    #[test]
    fn snapshot_rejects_garbage() {
        assert!(Hyperparams::from_snapshot("signal_variance = 1\nlength_scale = 1").is_err());
        assert!(Hyperparams::from_snapshot("foo = 1").is_err());
        assert!(Hyperparams::from_snapshot(
            "signal_variance = -1\nlength_scale = 1\nnoise_variance = 1"
        )
        .is_err());
    }

    #[test]
    fn log_roundtrip() {
        let h = Hyperparams::new(2.0, 0.5, 0.01);
        let back = Hyperparams::from_log(h.to_log());
        assert!((back.signal_variance - 2.0).abs() < 1e-15);
        assert!((back.length_scale - 0.5).abs() < 1e-15);
        assert!((back.noise_variance - 0.01).abs() < 1e-17);
    }
}
