use nalgebra::{DMatrix, Vector3};

use super::SmpcError;

/// State and input covariances along the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyTube {
    /// `Σx_k` for `k = 0..N`.
    pub sigma_x: Vec<DMatrix<f64>>,
    /// `Σu_k = K·Σx_k·Kᵀ` for `k = 0..N−1`.
    pub sigma_u: Vec<DMatrix<f64>>,
}

impl UncertaintyTube {
    pub fn horizon(&self) -> usize {
        self.sigma_u.len()
    }
}

/// `Σx_{k+1} = (A − BK)·Σx_k·(A − BK)ᵀ + Σ_i G_i·σ²_{k,i}·G_iᵀ` from `Σx_0 = 0`,
/// where `G_i` is column `i` of `coupling`.
pub fn propagate_uncertainty(
    ad: &DMatrix<f64>,
    bd: &DMatrix<f64>,
    k: &DMatrix<f64>,
    coupling: &DMatrix<f64>,
    variances: &[Vector3<f64>],
    n: usize,
) -> Result<UncertaintyTube, SmpcError> {
    let nx = ad.nrows();
    let nu = bd.ncols();
    if ad.ncols() != nx
        || bd.nrows() != nx
        || k.shape() != (nu, nx)
        || coupling.shape() != (nx, 3)
        || variances.len() < n
    {
        return Err(SmpcError::Dimension(format!(
            "tube: A {:?}, B {:?}, K {:?}, C {:?}, {} variances for N = {n}",
            ad.shape(),
            bd.shape(),
            k.shape(),
            coupling.shape(),
            variances.len()
        )));
    }
    let acl = ad - bd * k;
    let acl_t = acl.transpose();
    let mut sigma_x = Vec::with_capacity(n + 1);
    let mut sigma_u = Vec::with_capacity(n);
    let mut s = DMatrix::<f64>::zeros(nx, nx);
    sigma_x.push(s.clone());
    for var in variances.iter().take(n) {
        sigma_u.push(k * &s * k.transpose());
        let mut w = DMatrix::<f64>::zeros(nx, nx);
        for i in 0..3 {
            let v = var[i].max(0.0);
            if v > 0.0 {
                let g = coupling.column(i);
                w.ger(v, &g, &g, 1.0);
            }
        }
        s = &acl * &s * &acl_t + w;
        let t = s.transpose();
        s += t;
        s *= 0.5;
        sigma_x.push(s.clone());
    }
    Ok(UncertaintyTube { sigma_x, sigma_u })
}
