use nalgebra::{DMatrix, DVector, Vector3};

use super::SmpcError;
use crate::dynamics::{zoh, LinearModel};
use crate::ssgp::{predict_horizon, GpBelief, GpModel};

/// Velocity rows of the quad state receiving the GP outputs.
const VELOCITY_ROW: usize = 3;

/// Quad model augmented with the GP state-space models: continuous
/// `[[A, C₁H₁, C₂H₂, C₃H₃], [0, F₁, 0, 0], …]`, exactly discretized.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub dt: f64,
    pub nx: usize,
    /// Start index of each GP block in the augmented state.
    pub offsets: Vec<usize>,
    /// Continuous `C = [C₁ C₂ C₃]` (nx × 3), unit columns on the velocity rows.
    pub coupling: DMatrix<f64>,
    /// ZOH image of `C` over `dt`: effect of a constant acceleration on `x⁺`.
    pub coupling_d: DMatrix<f64>,
}

impl AugmentedModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Quad block of `Ã`, which equals the quad's own discretization.
    pub fn quad_a(&self) -> DMatrix<f64> {
        self.a.view((0, 0), (self.nx, self.nx)).into_owned()
    }

    pub fn quad_b(&self) -> DMatrix<f64> {
        self.b.rows(0, self.nx).into_owned()
    }

    /// `[x; z₁; z₂; …]`.
    pub fn stack(&self, x: &DVector<f64>, gp_states: &[DVector<f64>]) -> Result<DVector<f64>, SmpcError> {
        if x.len() != self.nx || gp_states.len() != self.offsets.len() {
            return Err(SmpcError::Dimension("augmented state".into()));
        }
        let mut xi = DVector::zeros(self.dim());
        xi.rows_mut(0, self.nx).copy_from(x);
        for (i, z) in gp_states.iter().enumerate() {
            let end = self.offsets.get(i + 1).copied().unwrap_or(self.dim());
            if z.len() != end - self.offsets[i] {
                return Err(SmpcError::Dimension(format!("GP state {i}")));
            }
            xi.rows_mut(self.offsets[i], z.len()).copy_from(z);
        }
        Ok(xi)
    }
}

pub fn build_augmented(quad: &LinearModel, gps: &[GpModel], dt: f64) -> Result<AugmentedModel, SmpcError> {
    let nx = quad.a.nrows();
    let nu = quad.b.ncols();
    if gps.len() > 3 || nx < VELOCITY_ROW + 3 {
        return Err(SmpcError::Dimension(format!(
            "{} GPs for a {nx}-state model",
            gps.len()
        )));
    }
    for (i, gp) in gps.iter().enumerate() {
        if (gp.dt - dt).abs() > 1e-12 {
            return Err(SmpcError::Dimension(format!(
                "GP {i} discretized at {} s, predictor at {dt} s",
                gp.dt
            )));
        }
    }
    let mut offsets = Vec::with_capacity(gps.len());
    let mut n = nx;
    for gp in gps {
        offsets.push(n);
        n += gp.order();
    }
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (nx, nx)).copy_from(&quad.a);
    let mut coupling = DMatrix::zeros(nx, 3);
    for i in 0..3 {
        coupling[(VELOCITY_ROW + i, i)] = 1.0;
    }
    for (i, gp) in gps.iter().enumerate() {
        let c = &gp.continuous;
        let o = offsets[i];
        let k = gp.order();
        // C_i·H_i: H_i lands in the velocity row of axis i
        for j in 0..k {
            a[(VELOCITY_ROW + i, o + j)] = c.h[j];
        }
        a.view_mut((o, o), (k, k)).copy_from(&c.f);
    }
    let mut b = DMatrix::zeros(n, nu);
    b.view_mut((0, 0), (nx, nu)).copy_from(&quad.b);
    let (ad, bd) = zoh(&a, &b, dt)?;
    let (_, coupling_d) = zoh(&quad.a, &coupling, dt)?;
    Ok(AugmentedModel {
        a: ad,
        b: bd,
        dt,
        nx,
        offsets,
        coupling,
        coupling_d,
    })
}

/// Augmented model plus the GP part of its initial state and the per-step
/// output statistics over the horizon.
#[derive(Debug, Clone)]
pub struct DisturbanceForecast {
    pub model: AugmentedModel,
    pub gp_states: Vec<DVector<f64>>,
    /// Predicted disturbance mean for steps `k = 0..N−1`.
    pub means: Vec<Vector3<f64>>,
    /// Predicted disturbance variance (noise included) for steps `k = 0..N−1`.
    pub variances: Vec<Vector3<f64>>,
}

/// Builds the forecast from GP beliefs valid at the current time. Step `k`
/// uses the output statistics of the belief propagated `k` steps.
pub fn disturbance_forecast(
    quad: &LinearModel,
    gps: &[GpModel],
    beliefs: &[GpBelief],
    horizon: usize,
    dt: f64,
) -> Result<DisturbanceForecast, SmpcError> {
    if gps.len() != 3 || beliefs.len() != 3 {
        return Err(SmpcError::Dimension("one GP and belief per axis".into()));
    }
    let model = build_augmented(quad, gps, dt)?;
    let mut means = vec![Vector3::zeros(); horizon];
    let mut variances = vec![Vector3::zeros(); horizon];
    for axis in 0..3 {
        let gp = &gps[axis];
        let b = &beliefs[axis];
        if b.mean.len() != gp.order() {
            return Err(SmpcError::Dimension(format!("belief {axis}")));
        }
        let now = gp.output(b);
        means[0][axis] = now.mean;
        variances[0][axis] = now.variance;
        for (k, o) in predict_horizon(b, gp, horizon.saturating_sub(1)).iter().enumerate() {
            means[k + 1][axis] = o.mean;
            variances[k + 1][axis] = o.variance;
        }
    }
    Ok(DisturbanceForecast {
        model,
        gp_states: beliefs.iter().map(|b| b.mean.clone()).collect(),
        means,
        variances,
    })
}
