use nalgebra::DMatrix;

use super::SmpcError;

const MAX_ITER: usize = 10_000;

/// Infinite-horizon discrete LQR: gain `K` (`u = −K·x`) and cost-to-go `P`.
#[derive(Debug, Clone)]
pub struct Lqr {
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    /// Doubling plus fixed-point steps taken.
    pub iterations: usize,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let t = m.transpose();
    *m += t;
    *m *= 0.5;
}

/// `Q + AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA`.
fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let gain = s.cholesky()?.solve(&(&bt_p * a));
    let at_p = a.transpose() * p;
    let mut next = q + &at_p * a - (&at_p * b) * gain;
    symmetrize(&mut next);
    Some(next)
}

/// Max-abs residual of the DARE at `P`.
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    match riccati_map(a, b, q, r, p) {
        Some(next) => (p - next).amax(),
        None => f64::INFINITY,
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Solves the DARE by structure-preserving doubling followed by fixed-point
/// polishing, then forms `K = (R + BᵀPB)⁻¹BᵀPA`.
pub fn dlqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<Lqr, SmpcError> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(SmpcError::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let r_chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| SmpcError::Config("R must be positive definite".into()))?;
    let eye = DMatrix::<f64>::identity(n, n);

    // doubling: A_{k+1} = A_k(I + G_kH_k)⁻¹A_k, G_{k+1} = G_k + A_k(I + G_kH_k)⁻¹G_kA_kᵀ,
    // H_{k+1} = H_k + A_kᵀH_k(I + G_kH_k)⁻¹A_k
    let mut ak = a.clone();
    let mut gk = b * r_chol.solve(&b.transpose());
    let mut hk = q.clone();
    let mut iterations = 0;
    for _ in 0..64 {
        iterations += 1;
        let w = (&eye + &gk * &hk).lu();
        let (Some(w_a), Some(w_g)) = (w.solve(&ak), w.solve(&gk)) else {
            break;
        };
        let h_next = &hk + ak.transpose() * &hk * &w_a;
        let g_next = &gk + &ak * &w_g * ak.transpose();
        let a_next = &ak * &w_a;
        let change = (&h_next - &hk).amax();
        let scale = h_next.amax().max(1.0);
        hk = h_next;
        gk = g_next;
        ak = a_next;
        symmetrize(&mut hk);
        symmetrize(&mut gk);
        if !hk.iter().all(|v| v.is_finite()) {
            break;
        }
        if change <= 1e-14 * scale {
            break;
        }
    }
    let mut p = if hk.iter().all(|v| v.is_finite()) {
        hk
    } else {
        q.clone()
    };

    // fixed-point refinement; also the fallback when doubling breaks down
    let mut converged = false;
    while iterations < MAX_ITER {
        iterations += 1;
        let Some(next) = riccati_map(a, b, q, r, &p) else {
            break;
        };
        let change = (&next - &p).amax();
        let scale = next.amax().max(1.0);
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
        if change <= 1e-13 * scale || change < 1e-12 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(SmpcError::RiccatiDivergence(MAX_ITER));
    }
    let bt_p = b.transpose() * &p;
    let s = r + &bt_p * b;
    let k = s
        .cholesky()
        .ok_or(SmpcError::RiccatiDivergence(iterations))?
        .solve(&(&bt_p * a));
    Ok(Lqr { k, p, iterations })
}
