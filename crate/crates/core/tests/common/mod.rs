//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use gpmpc::qpsolve::QpProblem;
use gpmpc::ssgp::{ContinuousGp, Hyperparams, TrainingBatch};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Matrix exponential by scaling and squaring of a plain Taylor series.
pub fn expm_taylor(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.abs().row_sum().max();
    let mut squarings = 0;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let scaled = a * scale;
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut sum = term.clone();
    for k in 1..30 {
        term = &term * &scaled / k as f64;
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Covariance function of a realization, evaluated independently of the filter.
pub fn k_approx(gp: &ContinuousGp, tau: f64) -> f64 {
    let phi = expm_taylor(&(&gp.f * tau.abs()));
    (&gp.h * phi * &gp.p_inf * gp.h.transpose())[(0, 0)]
}

pub struct DenseGp {
    pub log_likelihood: f64,
    pub next_mean: f64,
    pub next_latent_variance: f64,
}

/// O(n³) GP regression with the realization's kernel.
pub fn dense_gp(gp: &ContinuousGp, batch: &TrainingBatch) -> DenseGp {
    let samples: Vec<(f64, f64)> = batch.samples().collect();
    let n = samples.len();
    let noise = gp.hyper.noise_variance;
    // uniform grid: the kernel only depends on the lag index
    let dt = batch.dt();
    let lags: Vec<f64> = (0..=n).map(|i| k_approx(gp, i as f64 * dt)).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = lags[i.abs_diff(j)];
        }
        k[(i, i)] += noise;
    }
    let y = DVector::from_iterator(n, samples.iter().map(|s| s.1));
    let chol = k.cholesky().expect("dense covariance must be PD");
    let alpha = chol.solve(&y);
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let log_likelihood =
        -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * PI).ln();

    let k_star = DVector::from_iterator(n, (0..n).map(|i| lags[n - i]));
    let next_mean = k_star.dot(&alpha);
    let v = chol.solve(&k_star);
    let next_latent_variance = lags[0] - k_star.dot(&v);
    DenseGp {
        log_likelihood,
        next_mean,
        next_latent_variance,
    }
}

pub fn random_hyper(rng: &mut ChaCha8Rng) -> Hyperparams {
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> f64 {
        (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
    };
    Hyperparams::new(
        log_uniform(rng, 0.2, 5.0),
        log_uniform(rng, 0.15, 3.0),
        log_uniform(rng, 0.01, 0.5),
    )
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, dt: f64, scale: f64) -> TrainingBatch {
    let t0 = rng.random::<f64>() * 10.0;
    let phase = rng.random::<f64>() * 6.0;
    let samples: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let t = t0 + i as f64 * dt;
            (t, scale * ((0.8 * t + phase).sin() + 0.3 * normal(rng)))
        })
        .collect();
    TrainingBatch::from_samples(dt, &samples).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Global minimizer of a strictly convex QP by enumerating active sets in
/// order of size; the first KKT point found is optimal.
pub fn active_set_oracle(qp: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let n = qp.n();
    // one-sided rows: (row, bound, is_lower)
    let mut rows = Vec::new();
    for i in 0..qp.m() {
        if qp.l[i].is_finite() {
            rows.push((i, qp.l[i], true));
        }
        if qp.u[i].is_finite() && qp.u[i] != qp.l[i] {
            rows.push((i, qp.u[i], false));
        }
    }
    let r = rows.len();
    let max_size = n.min(r);
    for size in 0..=max_size {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            let distinct = idx.windows(2).all(|w| rows[w[0]].0 != rows[w[1]].0);
            if distinct {
                if let Some(sol) = try_active_set(qp, &rows, &idx) {
                    return Some(sol);
                }
            }
            // next combination
            let mut k = size;
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                if idx[k] < r - size + k {
                    idx[k] += 1;
                    for j in (k + 1)..size {
                        idx[j] = idx[j - 1] + 1;
                    }
                    k = usize::MAX;
                    break;
                }
            }
            if k != usize::MAX {
                break;
            }
        }
    }
    None
}

fn try_active_set(
    qp: &QpProblem,
    rows: &[(usize, f64, bool)],
    idx: &[usize],
) -> Option<(DVector<f64>, f64)> {
    let n = qp.n();
    let s = idx.len();
    let mut k = DMatrix::zeros(n + s, n + s);
    k.view_mut((0, 0), (n, n)).copy_from(&qp.p);
    let mut rhs = DVector::zeros(n + s);
    rhs.rows_mut(0, n).copy_from(&(-&qp.q));
    for (r, &j) in idx.iter().enumerate() {
        let (row, b, _) = rows[j];
        for c in 0..n {
            k[(n + r, c)] = qp.a[(row, c)];
            k[(c, n + r)] = qp.a[(row, c)];
        }
        rhs[n + r] = b;
    }
    let sol = k.clone().full_piv_lu().solve(&rhs)?;
    if (&k * &sol - &rhs).amax() > 1e-8 {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    for (r, &j) in idx.iter().enumerate() {
        let lam = sol[n + r];
        let lower = rows[j].2;
        if (lower && lam > 1e-10) || (!lower && lam < -1e-10) {
            return None;
        }
    }
    let ax = &qp.a * &x;
    for i in 0..qp.m() {
        if ax[i] < qp.l[i] - 1e-9 || ax[i] > qp.u[i] + 1e-9 {
            return None;
        }
    }
    let obj = qp.objective(&x);
    Some((x, obj))
}

pub fn random_qp(r: &mut ChaCha8Rng, n: usize, m: usize, definite: bool) -> QpProblem {
    let rank = if definite { n } else { r.random_range(1..=n) };
    let mm = DMatrix::from_fn(n, rank, |_, _| normal(r));
    let mut p = &mm * mm.transpose();
    if definite {
        p += DMatrix::identity(n, n) * 0.1;
    }
    let p = (&p + p.transpose()) * 0.5;
    let q = DVector::from_fn(n, |_, _| 3.0 * normal(r));
    let a = DMatrix::from_fn(m, n, |_, _| normal(r));
    let x0 = DVector::from_fn(n, |_, _| 0.5 * normal(r));
    let ax0 = &a * &x0;
    let mut l = DVector::zeros(m);
    let mut u = DVector::zeros(m);
    for i in 0..m {
        let kind = r.random_range(0..3);
        l[i] = if kind == 1 {
            f64::NEG_INFINITY
        } else {
            ax0[i] - r.random::<f64>()
        };
        u[i] = if kind == 2 {
            f64::INFINITY
        } else {
            ax0[i] + r.random::<f64>()
        };
    }
    QpProblem::new(p, q, a, l, u).unwrap()
}

/// Standard normal CDF through the complementary error function.
pub fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Fixed point of `Σ = A·Σ·Aᵀ + W` through the Kronecker-vectorized system.
pub fn dlyap(a: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let kron = a.kronecker(a);
    let lhs = DMatrix::<f64>::identity(n * n, n * n) - kron;
    let rhs = DVector::from_column_slice(w.as_slice());
    let v = lhs.lu().solve(&rhs).expect("stable A");
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// Three GP models for the x, y, z axes at the predictor step.
pub fn axis_gps(dt: f64, hyper: [Hyperparams; 3]) -> Vec<gpmpc::ssgp::GpModel> {
    hyper
        .iter()
        .map(|h| {
            gpmpc::ssgp::GpModel::discretize(gpmpc::ssgp::build_lti(h, 6).unwrap(), dt).unwrap()
        })
        .collect()
}
