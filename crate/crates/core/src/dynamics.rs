//! Rigid-body quadcopter model.
//!
//! The state is `x = (p, ṗ, Φ, Φ̇)` with position and velocity in the
//! inertial frame and ZYX Euler angles (roll, pitch, yaw). Inputs are
//! normalized: thrust as a fraction of `T_max`, torques as fractions of
//! their per-axis maxima.
//!
//! The same nonlinear model serves as the simulation truth (with a latent
//! force added) and as the one-step predictor used for disturbance
//! extraction. [`linearize_hover`] and [`discretize_exact`] produce the
//! linear predictor core of the MPC.

use nalgebra::{DMatrix, Matrix3, SVector, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gravitational acceleration (m/s²).
pub const GRAVITY: f64 = 9.81;

pub const STATE_DIM: usize = 12;
pub const INPUT_DIM: usize = 4;

pub type Vector12 = SVector<f64, STATE_DIM>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid parameter {name} = {value}: must be strictly positive")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("discretization step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Physical parameters. Defaults are the values of the reference airframe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadParams {
    /// Mass (kg).
    pub mass: f64,
    /// Principal moments of inertia (kg·m²).
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    /// Linear translational drag coefficient (N·s/m).
    pub drag: f64,
    /// Maximum collective thrust (N).
    pub thrust_max: f64,
    /// Maximum body torques (N·m).
    pub tau_x_max: f64,
    pub tau_y_max: f64,
    pub tau_z_max: f64,
}

impl Default for QuadParams {
    fn default() -> Self {
        Self {
            mass: 1.862,
            ixx: 0.0429,
            iyy: 0.0437,
            izz: 0.0753,
            drag: 0.1735,
            thrust_max: 62.06,
            tau_x_max: 4.6548,
            tau_y_max: 4.6548,
            tau_z_max: 1.7,
        }
    }
}

impl QuadParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let fields = [
            ("mass", self.mass),
            ("ixx", self.ixx),
            ("iyy", self.iyy),
            ("izz", self.izz),
            ("drag", self.drag),
            ("thrust_max", self.thrust_max),
            ("tau_x_max", self.tau_x_max),
            ("tau_y_max", self.tau_y_max),
            ("tau_z_max", self.tau_z_max),
        ];
        for (name, value) in fields {
            // drag may be zero for idealized tests; everything else must be positive
            let ok = if name == "drag" { value >= 0.0 } else { value > 0.0 };
            if !(ok && value.is_finite()) {
                return Err(DynamicsError::InvalidParam { name, value });
            }
        }
        Ok(())
    }

    /// Thrust fraction that balances gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * GRAVITY / self.thrust_max
    }

    fn inertia(&self) -> Vector3<f64> {
        Vector3::new(self.ixx, self.iyy, self.izz)
    }

    fn torque_max(&self) -> Vector3<f64> {
        Vector3::new(self.tau_x_max, self.tau_y_max, self.tau_z_max)
    }
}

/// Full rigid-body state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    /// Roll, pitch, yaw (rad).
    pub attitude: Vector3<f64>,
    /// Euler-angle rates (rad/s).
    pub attitude_rate: Vector3<f64>,
}

impl QuadState {
    pub fn hover_at(position: Vector3<f64>) -> Self {
        Self {
            position,
            ..Self::default()
        }
    }

    pub fn to_vector(&self) -> Vector12 {
        let mut v = Vector12::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.position);
        v.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        v.fixed_rows_mut::<3>(6).copy_from(&self.attitude);
        v.fixed_rows_mut::<3>(9).copy_from(&self.attitude_rate);
        v
    }

    pub fn from_vector(v: &Vector12) -> Self {
        Self {
            position: v.fixed_rows::<3>(0).into_owned(),
            velocity: v.fixed_rows::<3>(3).into_owned(),
            attitude: v.fixed_rows::<3>(6).into_owned(),
            attitude_rate: v.fixed_rows::<3>(9).into_owned(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }

    /// Copy with Euler angles wrapped to (−π, π].
    pub fn wrapped(&self) -> Self {
        let mut out = *self;
        out.attitude = self.attitude.map(wrap_angle);
        out
    }
}

pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Normalized actuator command `(T/T_max, τx/τx_max, τy/τy_max, τz/τz_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NormalizedInput(pub Vector4<f64>);

impl NormalizedInput {
    pub fn new(thrust: f64, tau_x: f64, tau_y: f64, tau_z: f64) -> Self {
        Self(Vector4::new(thrust, tau_x, tau_y, tau_z))
    }

    pub fn hover(params: &QuadParams) -> Self {
        Self::new(params.hover_thrust(), 0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    /// Clip to the physical actuator range: thrust in [0, 1], torques in [−1, 1].
    pub fn saturated(&self) -> Self {
        let u = &self.0;
        Self::new(
            u[0].clamp(0.0, 1.0),
            u[1].clamp(-1.0, 1.0),
            u[2].clamp(-1.0, 1.0),
            u[3].clamp(-1.0, 1.0),
        )
    }
}

/// Body-to-inertial rotation for ZYX Euler angles.
pub fn rotation_matrix(attitude: &Vector3<f64>) -> Matrix3<f64> {
    let (sr, cr) = attitude[0].sin_cos();
    let (sp, cp) = attitude[1].sin_cos();
    let (sy, cy) = attitude[2].sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Time derivative of the state under the given input and latent force.
pub fn nonlinear_derivative(
    state: &QuadState,
    input: &NormalizedInput,
    params: &QuadParams,
    latent_force: &Vector3<f64>,
) -> Result<Vector12, DynamicsError> {
    if !state.is_finite() {
        return Err(DynamicsError::NonFinite("state"));
    }
    if !input.is_finite() {
        return Err(DynamicsError::NonFinite("input"));
    }
    if !latent_force.iter().all(|f| f.is_finite()) {
        return Err(DynamicsError::NonFinite("latent force"));
    }
    Ok(derivative(&state.to_vector(), input, params, latent_force))
}

/// Unchecked derivative on the flat state vector; used inside the integrator.
pub(crate) fn derivative(
    x: &Vector12,
    input: &NormalizedInput,
    params: &QuadParams,
    latent_force: &Vector3<f64>,
) -> Vector12 {
    let vel = x.fixed_rows::<3>(3).into_owned();
    let att = x.fixed_rows::<3>(6).into_owned();
    let att_rate = x.fixed_rows::<3>(9).into_owned();
    let u = &input.0;

    // rotors cannot push down
    let thrust = u[0].max(0.0) * params.thrust_max;
    let body_thrust = rotation_matrix(&att) * Vector3::new(0.0, 0.0, thrust);
    let force = body_thrust - Vector3::new(0.0, 0.0, params.mass * GRAVITY)
        - params.drag * vel
        + latent_force;
    let accel = force / params.mass;

    let (sr, cr) = att[0].sin_cos();
    let (sp, cp) = att[1].sin_cos();
    let (dr, dp) = (att_rate[0], att_rate[1]);

    // ω = W(Φ)·Φ̇
    let w = Matrix3::new(1.0, 0.0, -sp, 0.0, cr, sr * cp, 0.0, -sr, cr * cp);
    let w_dot = Matrix3::new(
        0.0,
        0.0,
        -cp * dp,
        0.0,
        -sr * dr,
        cr * cp * dr - sr * sp * dp,
        0.0,
        -cr * dr,
        -sr * cp * dr - cr * sp * dp,
    );
    let w_inv = Matrix3::new(
        1.0,
        sr * sp / cp,
        cr * sp / cp,
        0.0,
        cr,
        -sr,
        0.0,
        sr / cp,
        cr / cp,
    );
    let omega = w * att_rate;
    let inertia = params.inertia();
    let torque = u.fixed_rows::<3>(1).component_mul(&params.torque_max());
    let j_omega = inertia.component_mul(&omega);
    let omega_dot = (torque - omega.cross(&j_omega)).component_div(&inertia);
    let att_accel = w_inv * (omega_dot - w_dot * att_rate);

    let mut dx = Vector12::zeros();
    dx.fixed_rows_mut::<3>(0).copy_from(&vel);
    dx.fixed_rows_mut::<3>(3).copy_from(&accel);
    dx.fixed_rows_mut::<3>(6).copy_from(&att_rate);
    dx.fixed_rows_mut::<3>(9).copy_from(&att_accel);
    dx
}

/// Continuous-time model `ẋ = A·x + B·(u − u_s)` about hover.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// Trim input.
    pub trim: NormalizedInput,
}

impl LinearModel {
    /// Attitude-to-acceleration coupling block.
    pub fn a1(&self) -> DMatrix<f64> {
        self.a.view((3, 6), (3, 3)).into_owned()
    }

    /// Thrust-to-acceleration block (rows of ṗ̇).
    pub fn b1(&self) -> DMatrix<f64> {
        self.b.view((3, 0), (3, 4)).into_owned()
    }

    /// Torque-to-angular-acceleration block.
    pub fn b2(&self) -> DMatrix<f64> {
        self.b.view((9, 0), (3, 4)).into_owned()
    }
}

/// Linearization of [`nonlinear_derivative`] at hover trim.
pub fn linearize_hover(params: &QuadParams) -> LinearModel {
    let n = STATE_DIM;
    let mut a = DMatrix::zeros(n, n);
    for i in 0..3 {
        a[(i, 3 + i)] = 1.0;
        a[(3 + i, 3 + i)] = -params.drag / params.mass;
        a[(6 + i, 9 + i)] = 1.0;
    }
    a[(3, 7)] = GRAVITY;
    a[(4, 6)] = -GRAVITY;

    let mut b = DMatrix::zeros(n, INPUT_DIM);
    b[(5, 0)] = params.thrust_max / params.mass;
    b[(9, 1)] = params.tau_x_max / params.ixx;
    b[(10, 2)] = params.tau_y_max / params.iyy;
    b[(11, 3)] = params.tau_z_max / params.izz;

    LinearModel {
        a,
        b,
        trim: NormalizedInput::hover(params),
    }
}

/// Zero-order-hold discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteModel {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub dt: f64,
}

/// Exact ZOH discretization of `(A, B)` via the exponential of `[[A, B], [0, 0]]·dt`.
pub fn zoh(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n {
        return Err(DynamicsError::Dimension(format!(
            "A is {}x{}, B is {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let mut block = DMatrix::zeros(n + m, n + m);
    block.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
    block.view_mut((0, n), (n, m)).copy_from(&(b * dt));
    let e = block.exp();
    Ok((
        e.view((0, 0), (n, n)).into_owned(),
        e.view((0, n), (n, m)).into_owned(),
    ))
}

pub fn discretize_exact(model: &LinearModel, dt: f64) -> Result<DiscreteModel, DynamicsError> {
    let (ad, bd) = zoh(&model.a, &model.b, dt)?;
    Ok(DiscreteModel { ad, bd, dt })
}

/// Raised when a truth-integration step produces a non-finite state.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("simulation fault: non-finite state after integration step")]
pub struct SimulationFault;

/// One RK4 step of the nonlinear model with input and latent force held constant.
pub fn integrate_truth(
    state: &QuadState,
    input: &NormalizedInput,
    params: &QuadParams,
    latent_force: &Vector3<f64>,
    dt_sim: f64,
) -> Result<QuadState, SimulationFault> {
    let x = state.to_vector();
    let f = |x: &Vector12| derivative(x, input, params, latent_force);
    let k1 = f(&x);
    let k2 = f(&(x + k1 * (0.5 * dt_sim)));
    let k3 = f(&(x + k2 * (0.5 * dt_sim)));
    let k4 = f(&(x + k3 * dt_sim));
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt_sim / 6.0);
    let out = QuadState::from_vector(&next);
    if out.is_finite() {
        Ok(out)
    } else {
        Err(SimulationFault)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hover_state() -> QuadState {
        QuadState::hover_at(Vector3::new(1.0, -2.0, 3.0))
    }

    #[test]
    fn hover_trim_is_equilibrium() {
        let p = QuadParams::default();
        let dx = nonlinear_derivative(
            &hover_state(),
            &NormalizedInput::hover(&p),
            &p,
            &Vector3::zeros(),
        )
        .unwrap();
        assert!(dx.norm() < 1e-12, "{dx}");
    }

    #[test]
    fn full_thrust_vertical_acceleration() {
        let p = QuadParams::default();
        let dx = nonlinear_derivative(
            &hover_state(),
            &NormalizedInput::new(1.0, 0.0, 0.0, 0.0),
            &p,
            &Vector3::zeros(),
        )
        .unwrap();
        let expected = (62.06 - 1.862 * 9.81) / 1.862;
        assert!((dx[5] - expected).abs() < 1e-12);
        assert!((dx[5] - 23.52).abs() < 5e-3);
    }

    #[test]
    fn latent_force_divides_by_mass() {
        let p = QuadParams::default();
        let dx = nonlinear_derivative(
            &hover_state(),
            &NormalizedInput::hover(&p),
            &p,
            &Vector3::new(1.862, 0.0, 0.0),
        )
        .unwrap();
        assert!((dx[3] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_finite() {
        let p = QuadParams::default();
        let err = nonlinear_derivative(
            &hover_state(),
            &NormalizedInput::new(f64::NAN, 0.0, 0.0, 0.0),
            &p,
            &Vector3::zeros(),
        );
        assert_eq!(err, Err(DynamicsError::NonFinite("input")));
    }

    #[test]
    fn negative_thrust_is_clamped() {
        let p = QuadParams::default();
        let dx = nonlinear_derivative(
            &hover_state(),
            &NormalizedInput::new(-0.5, 0.0, 0.0, 0.0),
            &p,
            &Vector3::zeros(),
        )
        .unwrap();
        assert!((dx[5] + GRAVITY).abs() < 1e-12);
    }

    #[test]
    fn hover_linearization_values() {
        let p = QuadParams::default();
        let lin = linearize_hover(&p);
        assert!((lin.b[(5, 0)] - 62.06 / 1.862).abs() < 1e-12);
        assert!((lin.b[(5, 0)] - 33.33).abs() < 5e-3);
        assert!((lin.trim.0[0] - 0.2943).abs() < 5e-5);
        let a1 = lin.a1();
        assert_eq!(a1[(0, 1)], 9.81);
        assert_eq!(a1[(1, 0)], -9.81);
        assert_eq!(a1.iter().filter(|v| **v != 0.0).count(), 2);
        // B1 only in the vertical-acceleration row
        let b1 = lin.b1();
        assert_eq!(b1.iter().filter(|v| **v != 0.0).count(), 1);
        let b2 = lin.b2();
        assert!((b2[(0, 1)] - 4.6548 / 0.0429).abs() < 1e-12);
        assert!((b2[(2, 3)] - 1.7 / 0.0753).abs() < 1e-12);
    }

    #[test]
    fn discretize_zero_dynamics() {
        let lin = LinearModel {
            a: DMatrix::zeros(3, 3),
            b: DMatrix::identity(3, 3),
            trim: NormalizedInput::default(),
        };
        let d = discretize_exact(&lin, 0.1).unwrap();
        assert!((d.ad.clone() - DMatrix::identity(3, 3)).abs().max() < 1e-15);
        assert!((d.bd.clone() - DMatrix::identity(3, 3) * 0.1).abs().max() < 1e-15);
    }

    #[test]
    fn discretize_rejects_bad_step() {
        let lin = linearize_hover(&QuadParams::default());
        assert_eq!(
            discretize_exact(&lin, 0.0).unwrap_err(),
            DynamicsError::InvalidStep(0.0)
        );
        assert!(discretize_exact(&lin, -1.0).is_err());
    }

    #[test]
    fn double_integrator_coupling_is_dt() {
        let p = QuadParams {
            drag: 0.0,
            ..QuadParams::default()
        };
        let d = discretize_exact(&linearize_hover(&p), 0.1).unwrap();
        for i in 0..3 {
            assert!((d.ad[(i, 3 + i)] - 0.1).abs() < 1e-14);
        }
    }

    #[test]
    fn vertical_velocity_zoh_entry() {
        let p = QuadParams::default();
        let d = discretize_exact(&linearize_hover(&p), 0.1).unwrap();
        // ∫₀^dt e^{-kτ/m} dτ · T_max/m with the vertical channel decoupled
        let k = p.drag / p.mass;
        let exact = (1.0 - (-k * 0.1f64).exp()) / k * p.thrust_max / p.mass;
        assert!((d.bd[(5, 0)] - exact).abs() < 1e-12);

        // without drag the entry is exactly dt·T_max/m
        let no_drag = QuadParams { drag: 0.0, ..p };
        let d0 = discretize_exact(&linearize_hover(&no_drag), 0.1).unwrap();
        assert!((d0.bd[(5, 0)] - 0.1 * p.thrust_max / p.mass).abs() < 1e-12);
        assert!((d0.bd[(5, 0)] - 3.333).abs() < 5e-3);
    }

    #[test]
    fn wrap_angle_range() {
        use std::f64::consts::PI;
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.3) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn state_vector_roundtrip() {
        let s = QuadState {
            position: Vector3::new(1.0, 2.0, 3.0),
            velocity: Vector3::new(4.0, 5.0, 6.0),
            attitude: Vector3::new(0.1, 0.2, 0.3),
            attitude_rate: Vector3::new(-1.0, -2.0, -3.0),
        };
        assert_eq!(QuadState::from_vector(&s.to_vector()), s);
    }

    #[test]
    fn hover_integration_is_stationary() {
        let p = QuadParams::default();
        let mut s = hover_state();
        for _ in 0..500 {
            s = integrate_truth(&s, &NormalizedInput::hover(&p), &p, &Vector3::zeros(), 0.002)
                .unwrap();
        }
        assert!((s.to_vector() - hover_state().to_vector()).norm() < 1e-12);
    }

    #[test]
    fn constant_force_gives_linear_velocity() {
        let p = QuadParams {
            drag: 0.0,
            ..QuadParams::default()
        };
        let f = 0.5;
        let mut s = hover_state();
        let dt = 0.002;
        for _ in 0..1000 {
            s = integrate_truth(&s, &NormalizedInput::hover(&p), &p, &Vector3::new(f, 0.0, 0.0), dt)
                .unwrap();
        }
        assert!((s.velocity[0] - f / p.mass * 2.0).abs() < 1e-10);
        assert!((s.position[0] - 1.0 - 0.5 * f / p.mass * 4.0).abs() < 1e-9);
    }

    #[test]
    fn drag_decay_matches_closed_form() {
        let p = QuadParams::default();
        let mut s = hover_state();
        s.velocity = Vector3::new(2.0, -1.0, 0.0);
        let dt = 1e-3;
        for _ in 0..2000 {
            s = integrate_truth(&s, &NormalizedInput::hover(&p), &p, &Vector3::zeros(), dt)
                .unwrap();
        }
        let decay = (-p.drag * 2.0 / p.mass).exp();
        assert!((s.velocity[0] - 2.0 * decay).abs() < 1e-6);
        assert!((s.velocity[1] + decay).abs() < 1e-6);
    }

    #[test]
    fn integration_fault_on_overflow() {
        let p = QuadParams::default();
        let mut s = hover_state();
        s.velocity = Vector3::new(f64::MAX, 0.0, 0.0);
        let r = integrate_truth(&s, &NormalizedInput::hover(&p), &p, &Vector3::zeros(), 1.0);
        assert_eq!(r, Err(SimulationFault));
    }
}
