mod common;

use common::expm_taylor;
use gpmpc::dynamics::{
    discretize_exact, integrate_truth, linearize_hover, nonlinear_derivative, zoh, NormalizedInput, QuadParams,
    QuadState, GRAVITY,
};
use nalgebra::{DMatrix, Matrix3, Vector3, Vector4};

fn at_hover(params: &QuadParams, x: &[f64; 12], du: &Vector4<f64>) -> nalgebra::SVector<f64, 12> {
    let s = QuadState::from_vector(&nalgebra::SVector::<f64, 12>::from_column_slice(x));
    let u = NormalizedInput(NormalizedInput::hover(params).0 + du);
    nonlinear_derivative(&s, &u, params, &Vector3::zeros()).unwrap()
}

#[test]
fn jacobian_matches_linearization() {
    let p = QuadParams::default();
    let lin = linearize_hover(&p);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..12 {
        let mut up = [0.0; 12];
        let mut down = [0.0; 12];
        up[j] = h;
        down[j] = -h;
        let col = (at_hover(&p, &up, &Vector4::zeros()) - at_hover(&p, &down, &Vector4::zeros())) / (2.0 * h);
        for i in 0..12 {
            worst = worst.max((col[i] - lin.a[(i, j)]).abs());
        }
    }
    for j in 0..4 {
        let mut du = Vector4::zeros();
        du[j] = h;
        let col = (at_hover(&p, &[0.0; 12], &du) - at_hover(&p, &[0.0; 12], &(-du))) / (2.0 * h);
        for i in 0..12 {
            worst = worst.max((col[i] - lin.b[(i, j)]).abs());
        }
    }
    assert!(worst < 1e-6, "max entry error {worst}");
}

#[test]
fn hover_trim_close_to_rounded_value() {
    let p = QuadParams::default();
    let u = p.hover_thrust();
    assert!((u - 1.862 * 9.81 / 62.06).abs() < 1e-15);
    assert!((u - 0.3).abs() < 0.01);
}

#[test]
fn zoh_matches_quadrature() {
    let lin = linearize_hover(&QuadParams::default());
    let dt = 0.1;
    let d = discretize_exact(&lin, dt).unwrap();
    assert!((&d.ad - expm_taylor(&(&lin.a * dt))).amax() < 1e-12);
    // Simpson rule on ∫₀^dt exp(A·s) ds · B
    let m = 200;
    let hs = dt / m as f64;
    let mut integral = DMatrix::zeros(12, 12);
    for k in 0..=m {
        let w = if k == 0 || k == m {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        integral += expm_taylor(&(&lin.a * (k as f64 * hs))) * w;
    }
    let bd = integral * (hs / 3.0) * &lin.b;
    assert!((&d.bd - bd).amax() < 1e-10);
}

#[test]
fn zoh_semigroup() {
    let lin = linearize_hover(&QuadParams::default());
    let (a1, b1) = zoh(&lin.a, &lin.b, 0.05).unwrap();
    let (a2, b2) = zoh(&lin.a, &lin.b, 0.1).unwrap();
    assert!((&a2 - &a1 * &a1).amax() < 1e-12);
    assert!((&b2 - (&a1 * &b1 + &b1)).amax() < 1e-12);
}

#[test]
fn free_fall_is_exact() {
    let p = QuadParams {
        drag: 0.0,
        ..QuadParams::default()
    };
    let mut s = QuadState::hover_at(Vector3::new(0.0, 0.0, 10.0));
    let off = NormalizedInput::new(0.0, 0.0, 0.0, 0.0);
    let h = 0.01;
    for _ in 0..100 {
        s = integrate_truth(&s, &off, &p, &Vector3::zeros(), h).unwrap();
    }
    assert!((s.position.z - (10.0 - 0.5 * GRAVITY)).abs() < 1e-10);
    assert!((s.velocity.z + GRAVITY).abs() < 1e-10);
}

fn body_rates(s: &QuadState) -> Vector3<f64> {
    let (sr, cr) = s.attitude.x.sin_cos();
    let (sp, cp) = s.attitude.y.sin_cos();
    let w = Matrix3::new(1.0, 0.0, -sp, 0.0, cr, sr * cp, 0.0, -sr, cr * cp);
    w * s.attitude_rate
}

#[test]
fn torque_free_rotation_conserves_momentum_and_energy() {
    let p = QuadParams::default();
    let j = Vector3::new(p.ixx, p.iyy, p.izz);
    let mut s = QuadState::default();
    s.attitude = Vector3::new(0.1, -0.2, 0.3);
    s.attitude_rate = Vector3::new(0.8, -0.5, 0.6);
    let off = NormalizedInput::new(0.0, 0.0, 0.0, 0.0);
    let l0 = j.component_mul(&body_rates(&s)).norm();
    let e0 = body_rates(&s).dot(&j.component_mul(&body_rates(&s)));
    for _ in 0..500 {
        s = integrate_truth(&s, &off, &p, &Vector3::zeros(), 0.001).unwrap();
    }
    let w = body_rates(&s);
    assert!((j.component_mul(&w).norm() - l0).abs() < 1e-8 * l0);
    assert!((w.dot(&j.component_mul(&w)) - e0).abs() < 1e-8 * e0);
}

#[test]
fn rk4_is_fourth_order() {
    let p = QuadParams::default();
    let mut s0 = QuadState::hover_at(Vector3::zeros());
    s0.attitude = Vector3::new(0.2, -0.1, 0.4);
    s0.attitude_rate = Vector3::new(0.5, 0.3, -0.2);
    let u = NormalizedInput::new(0.35, 0.05, -0.04, 0.02);
    let f = Vector3::new(0.3, -0.2, 0.1);
    let run = |h: f64, n: usize| {
        let mut s = s0;
        for _ in 0..n {
            s = integrate_truth(&s, &u, &p, &f, h).unwrap();
        }
        s.to_vector()
    };
    let fine = run(1e-4, 10_000);
    let e1 = (run(0.02, 50) - fine).norm();
    let e2 = (run(0.01, 100) - fine).norm();
    let order = (e1 / e2).log2();
    assert!((3.5..4.5).contains(&order), "observed order {order}");
}

#[test]
fn latent_force_accelerates_by_inverse_mass() {
    let p = QuadParams::default();
    let s = QuadState::hover_at(Vector3::zeros());
    let f = Vector3::new(1.0, -2.0, 0.5);
    let dx = nonlinear_derivative(&s, &NormalizedInput::hover(&p), &p, &f).unwrap();
    for i in 0..3 {
        assert!((dx[3 + i] - f[i] / p.mass).abs() < 1e-12);
    }
}
