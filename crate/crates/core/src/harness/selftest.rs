use std::f64::consts::PI;
use std::fmt;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::HarnessError;
use crate::ssgp::{
    build_lti, filter_batch, negative_log_likelihood, nll_gradient, predict_horizon, ContinuousGp, GpModel,
    Hyperparams, TrainingBatch,
};

/// Outcome of the Kalman-vs-dense GP check and the gradient check.
#[derive(Debug, Clone)]
pub struct SelftestReport {
    pub batches: usize,
    /// Worst relative error of log-likelihood, predictive mean and variance.
    pub inference_error: f64,
    /// Worst gradient error relative to `max(1e-4, 1e-3·|g|)`; passes below 1.
    pub gradient_error: f64,
    pub elapsed: Duration,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.inference_error <= 1e-6 && self.gradient_error <= 1.0
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "batches: {}", self.batches)?;
        writeln!(f, "kalman vs dense, worst relative error: {:.3e} (tol 1e-6)", self.inference_error)?;
        writeln!(f, "gradient vs central differences, worst error/tol: {:.3}", self.gradient_error)?;
        writeln!(f, "elapsed: {:.3} s", self.elapsed.as_secs_f64())?;
        write!(f, "{}", if self.passed() { "PASS" } else { "FAIL" })
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Log-likelihood and one-step-ahead latent mean/variance of the dense GP
/// with the realization's own covariance function.
fn dense(gp: &ContinuousGp, batch: &TrainingBatch) -> Option<(f64, f64, f64)> {
    let y: Vec<f64> = batch.values().collect();
    let n = y.len();
    let lags: Vec<f64> = (0..=n).map(|i| gp.kernel(i as f64 * batch.dt())).collect();
    let k = DMatrix::from_fn(n, n, |i, j| {
        lags[i.abs_diff(j)] + if i == j { gp.hyper.noise_variance } else { 0.0 }
    });
    let y = DVector::from_vec(y);
    let chol = k.cholesky()?;
    let alpha = chol.solve(&y);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let ll = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln();
    let ks = DVector::from_fn(n, |i, _| lags[n - i]);
    let mean = ks.dot(&alpha);
    let var = lags[0] - ks.dot(&chol.solve(&ks));
    Some((ll, mean, var))
}

fn random_case(rng: &mut ChaCha8Rng) -> Result<(Hyperparams, TrainingBatch), HarnessError> {
    let mut log_u = |lo: f64, hi: f64| (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
    let hyper = Hyperparams::new(log_u(0.2, 5.0), log_u(0.15, 3.0), log_u(0.01, 0.5));
    let n = rng.random_range(2..=32);
    let dt = 0.05 + 0.15 * rng.random::<f64>();
    let phase = 6.0 * rng.random::<f64>();
    let samples: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let t = i as f64 * dt;
            let e: f64 = rng.sample(StandardNormal);
            (t, (0.8 * t + phase).sin() + 0.3 * e)
        })
        .collect();
    Ok((hyper, TrainingBatch::from_samples(dt, &samples)?))
}

/// Checks Kalman-filter inference against dense GP regression and the
/// analytic likelihood gradient against central differences.
pub fn gp_selftest(batches: usize, seed: u64) -> Result<SelftestReport, HarnessError> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inference_error: f64 = 0.0;
    let mut gradient_error: f64 = 0.0;
    for _ in 0..batches {
        let (hyper, batch) = random_case(&mut rng)?;
        let gp = build_lti(&hyper, 6)?;
        let model = GpModel::discretize(gp.clone(), batch.dt())?;
        let (belief, ll) = filter_batch(&model, &batch)?;
        let next = predict_horizon(&belief, &model, 1)[0];
        let Some((d_ll, d_mean, d_var)) = dense(&gp, &batch) else {
            inference_error = f64::INFINITY;
            continue;
        };
        inference_error = inference_error
            .max(rel(ll, d_ll))
            .max(rel(next.mean, d_mean))
            .max(rel(next.variance - hyper.noise_variance, d_var));

        let (_, grad) = nll_gradient(&batch, &hyper, 6)?;
        let theta = hyper.to_log();
        let h = 1e-5;
        for j in 0..3 {
            let (mut up, mut down) = (theta, theta);
            up[j] += h;
            down[j] -= h;
            let fd = (negative_log_likelihood(&batch, &Hyperparams::from_log(up), 6)?
                - negative_log_likelihood(&batch, &Hyperparams::from_log(down), 6)?)
                / (2.0 * h);
            let tol = f64::max(1e-4, 1e-3 * grad[j].abs());
            gradient_error = gradient_error.max((grad[j] - fd).abs() / tol);
        }
    }
    Ok(SelftestReport {
        batches,
        inference_error,
        gradient_error,
        elapsed: start.elapsed(),
    })
}
