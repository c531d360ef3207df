use nalgebra::{Complex, DMatrix, DVector, RowDVector};
use std::f64::consts::PI;

use super::{GpError, Hyperparams};

/// Fourier transform of `σ_m²·exp(−τ²/l²)`.
pub fn se_spectral_density(omega: f64, hyper: &Hyperparams) -> f64 {
    let l = hyper.length_scale;
    hyper.signal_variance * l * PI.sqrt() * (-(l * l * omega * omega) / 4.0).exp()
}

pub fn se_kernel(tau: f64, hyper: &Hyperparams) -> f64 {
    let l = hyper.length_scale;
    hyper.signal_variance * (-(tau * tau) / (l * l)).exp()
}

/// Stable spectral factor of the truncated SE spectrum in units where `l = 2`.
///
/// With `ν = l·ω/2` the reciprocal spectrum is `exp(ν²)`, truncated to
/// `Σ_{k≤N} ν^{2k}/k!`. The factor is the monic polynomial whose roots are
/// the left-half-plane roots of that polynomial evaluated at `ν² = −s²`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitFactor {
    pub order: usize,
    /// Coefficients `a_0..a_{N−1}` of `s^N + a_{N−1}s^{N−1} + … + a_0`.
    pub coeffs: Vec<f64>,
    /// Companion matrix of the factor.
    pub companion: DMatrix<f64>,
    /// Stationary covariance of the companion system under unit noise on the last state.
    pub unit_cov: DMatrix<f64>,
}

impl UnitFactor {
    pub fn new(order: usize) -> Result<Self, GpError> {
        if order == 0 {
            return Err(GpError::InvalidOrder(order));
        }
        let n = order;
        let fail = |reason: String| GpError::Factorization { order, reason };

        // e_N(−u) = Σ (−u)^k / k!, made monic in u.
        let mut fact = vec![1.0f64; n + 1];
        for k in 1..=n {
            fact[k] = fact[k - 1] * k as f64;
        }
        let lead = if n % 2 == 0 { 1.0 } else { -1.0 } / fact[n];
        let monic: Vec<f64> = (0..n)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                sign / fact[k] / lead
            })
            .collect();

        let mut comp = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            comp[(i, i - 1)] = 1.0;
        }
        for k in 0..n {
            comp[(k, n - 1)] = -monic[k];
        }
        let eval = |u: Complex<f64>| -> (Complex<f64>, Complex<f64>) {
            // Horner for value and derivative of the monic polynomial
            let mut p = Complex::new(1.0, 0.0);
            let mut dp = Complex::new(0.0, 0.0);
            for k in (0..n).rev() {
                dp = dp * u + p;
                p = p * u + monic[k];
            }
            (p, dp)
        };

        let mut roots: Vec<Complex<f64>> = comp.complex_eigenvalues().iter().copied().collect();
        for r in roots.iter_mut() {
            for _ in 0..8 {
                let (p, dp) = eval(*r);
                if dp.norm() == 0.0 {
                    break;
                }
                let step = p / dp;
                *r -= step;
                if step.norm() <= 1e-15 * r.norm().max(1.0) {
                    break;
                }
            }
            let (p, _) = eval(*r);
            if !p.norm().is_finite() || p.norm() > 1e-8 * (1.0 + r.norm().powi(n as i32)) {
                return Err(fail(format!("root {r} did not converge (residual {})", p.norm())));
            }
        }

        // s = ±√u; the principal root has Re ≥ 0, so its negative is the stable one.
        let stable: Vec<Complex<f64>> = roots.iter().map(|u| -u.sqrt()).collect();
        if let Some(bad) = stable.iter().find(|s| !(s.re < 0.0)) {
            return Err(fail(format!("root {bad} is not in the open left half-plane")));
        }

        let mut poly = vec![Complex::new(1.0, 0.0)];
        for s in &stable {
            let mut next = vec![Complex::new(0.0, 0.0); poly.len() + 1];
            for (k, c) in poly.iter().enumerate() {
                next[k + 1] += *c;
                next[k] -= *c * s;
            }
            poly = next;
        }
        let mut coeffs = Vec::with_capacity(n);
        for c in poly.iter().take(n) {
            if c.im.abs() > 1e-8 * (1.0 + c.re.abs()) {
                return Err(fail(format!("factor coefficient {c} is not real")));
            }
            coeffs.push(c.re);
        }

        let companion = companion_matrix(&coeffs);
        let mut l = DMatrix::zeros(n, 1);
        l[(n - 1, 0)] = 1.0;
        let unit_cov = stationary_covariance(&companion, &l, 1.0)?;
        Ok(Self {
            order,
            coeffs,
            companion,
            unit_cov,
        })
    }
}

/// Companion matrix with ones on the superdiagonal and `−a_k` in the last row.
fn companion_matrix(coeffs: &[f64]) -> DMatrix<f64> {
    let n = coeffs.len();
    let mut f = DMatrix::zeros(n, n);
    for i in 0..n.saturating_sub(1) {
        f[(i, i + 1)] = 1.0;
    }
    for (k, a) in coeffs.iter().enumerate() {
        f[(n - 1, k)] = -a;
    }
    f
}

/// Largest real part among the eigenvalues.
pub(crate) fn spectral_abscissa(f: &DMatrix<f64>) -> f64 {
    f.complex_eigenvalues()
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Solves `F·P + P·Fᵀ + L·q·Lᵀ = 0` for Hurwitz `F`.
pub fn stationary_covariance(
    f: &DMatrix<f64>,
    l: &DMatrix<f64>,
    q: f64,
) -> Result<DMatrix<f64>, GpError> {
    let n = f.nrows();
    let abscissa = spectral_abscissa(f);
    if !(abscissa < 0.0) {
        return Err(GpError::NotHurwitz(abscissa));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let lyap = eye.kronecker(f) + f.kronecker(&eye);
    let rhs_mat = l * l.transpose() * (-q);
    let rhs = DVector::from_column_slice(rhs_mat.as_slice());
    let sol = lyap.lu().solve(&rhs).ok_or(GpError::SingularLyapunov)?;
    let p = DMatrix::from_column_slice(n, n, sol.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Continuous-time LTI realization `ż = F·z + L·w`, `y = H·z`, `w ~ N(0, q)`.
#[derive(Debug, Clone)]
pub struct ContinuousGp {
    pub hyper: Hyperparams,
    pub order: usize,
    pub f: DMatrix<f64>,
    pub l: DMatrix<f64>,
    pub h: RowDVector<f64>,
    pub q: f64,
    /// Stationary state covariance.
    pub p_inf: DMatrix<f64>,
    /// Time scale `c = 2/l` relating `F` to the unit companion matrix.
    pub time_scale: f64,
}

/// Builds the LTI realization for the given hyperparameters and Taylor order.
pub fn build_lti(hyper: &Hyperparams, order: usize) -> Result<ContinuousGp, GpError> {
    hyper.validate()?;
    ContinuousGp::from_factor(&UnitFactor::new(order)?, hyper)
}

impl ContinuousGp {
    pub fn from_factor(factor: &UnitFactor, hyper: &Hyperparams) -> Result<Self, GpError> {
        hyper.validate()?;
        let n = factor.order;
        let c = 2.0 / hyper.length_scale;
        let f = &factor.companion * c;
        let mut l = DMatrix::zeros(n, 1);
        l[(n - 1, 0)] = 1.0;
        let mut h = RowDVector::zeros(n);
        h[0] = 1.0;
        // normalize so that H·P∞·Hᵀ = σ_m² exactly
        let unit_var = factor.unit_cov[(0, 0)];
        let scale = hyper.signal_variance / unit_var;
        let p_inf = &factor.unit_cov * scale;
        let q = c * scale;
        if !(q.is_finite() && p_inf.iter().all(|v| v.is_finite())) {
            return Err(GpError::Factorization {
                order: n,
                reason: format!("non-finite realization for {hyper}"),
            });
        }
        Ok(Self {
            hyper: *hyper,
            order: n,
            f,
            l,
            h,
            q,
            p_inf,
            time_scale: c,
        })
    }

    /// Covariance function of the realization, `H·exp(F|τ|)·P∞·Hᵀ`.
    pub fn kernel(&self, tau: f64) -> f64 {
        let phi = (&self.f * tau.abs()).exp();
        (&self.h * phi * &self.p_inf * self.h.transpose())[(0, 0)]
    }

    pub fn lyapunov_residual(&self) -> f64 {
        let r = &self.f * &self.p_inf
            + &self.p_inf * self.f.transpose()
            + &self.l * self.l.transpose() * self.q;
        r.abs().max()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_density_values() {
        let h = Hyperparams::new(1.0, 1.0, 0.1);
        assert!((se_spectral_density(0.0, &h) - PI.sqrt()).abs() < 1e-15);
        let s2 = se_spectral_density(2.0, &h);
        assert!((s2 - PI.sqrt() * (-1.0f64).exp()).abs() < 1e-15);
        assert!((s2 - 0.6520).abs() < 5e-5);
        let h2 = Hyperparams::new(2.5, 0.7, 0.1);
        assert!((se_spectral_density(0.0, &h2) - 2.5 * 0.7 * PI.sqrt()).abs() < 1e-14);
        for w in [0.1, 1.3, 7.0] {
            assert_eq!(se_spectral_density(w, &h2), se_spectral_density(-w, &h2));
        }
    }

    #[test]
    fn scalar_lyapunov() {
        let f = DMatrix::from_element(1, 1, -1.0);
        let l = DMatrix::from_element(1, 1, 1.0);
        let p = stationary_covariance(&f, &l, 2.0).unwrap();
        assert!((p[(0, 0)] - 1.0).abs() < 1e-15);
        let p0 = stationary_covariance(&f, &l, 0.0).unwrap();
        assert_eq!(p0[(0, 0)], 0.0);
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        let f = DMatrix::from_element(1, 1, 0.5);
        let l = DMatrix::from_element(1, 1, 1.0);
        assert!(matches!(
            stationary_covariance(&f, &l, 1.0),
            Err(GpError::NotHurwitz(_))
        ));
    }

    #[test]
    fn order_six_is_hurwitz_and_normalized() {
        let gp = build_lti(&Hyperparams::new(1.0, 1.0, 0.1), 6).unwrap();
        assert!(spectral_abscissa(&gp.f) < 0.0);
        let var = (&gp.h * &gp.p_inf * gp.h.transpose())[(0, 0)];
        assert!((var - 1.0).abs() < 1e-8);
        assert!((gp.kernel(0.0) - 1.0).abs() < 1e-8);
        assert!(gp.lyapunov_residual() < 1e-10);
    }

    #[test]
    fn factor_matches_truncated_spectrum() {
        // |a(iν)|² ∝ Σ_{k≤N} ν^{2k}/k!
        let fac = UnitFactor::new(6).unwrap();
        let eval = |nu: f64| {
            let s = Complex::new(0.0, nu);
            let mut p = Complex::new(1.0, 0.0);
            for k in (0..6).rev() {
                p = p * s + fac.coeffs[k];
            }
            p.norm_sqr()
        };
        let taylor = |nu: f64| {
            let x = nu * nu;
            (0..=6).fold((0.0, 1.0), |(acc, term), k| {
                (acc + term, term * x / (k + 1) as f64)
            })
            .0
        };
        let ratio0 = eval(0.0) / taylor(0.0);
        for nu in [0.3, 1.0, 2.2, 4.0] {
            let r = eval(nu) / taylor(nu);
            assert!((r / ratio0 - 1.0).abs() < 1e-10, "ν={nu}: {r} vs {ratio0}");
        }
        // leading coefficient: 1/N! of the Taylor polynomial
        assert!((ratio0 - 720.0).abs() < 1e-6);
    }

    #[test]
    fn several_orders_build() {
        for order in 1..=8 {
            let gp = build_lti(&Hyperparams::new(0.5, 2.0, 0.1), order).unwrap();
            assert_eq!(gp.f.nrows(), order);
            assert!(spectral_abscissa(&gp.f) < 0.0);
            assert!((gp.kernel(0.0) - 0.5).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            build_lti(&Hyperparams::new(1.0, -1.0, 0.1), 6),
            Err(GpError::InvalidHyper(_))
        ));
        assert!(matches!(
            build_lti(&Hyperparams::new(1.0, 1.0, 0.1), 0),
            Err(GpError::InvalidOrder(0))
        ));
    }
}
