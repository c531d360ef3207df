use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{DVector, Vector2, Vector3};

use super::{ReferenceConfig, ReferenceKind};
use crate::dynamics::STATE_DIM;

/// Position and velocity setpoint at a time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferencePoint {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

impl ReferencePoint {
    /// Full state reference: level attitude, zero rates.
    pub fn to_state(&self) -> DVector<f64> {
        let mut x = DVector::zeros(STATE_DIM);
        x.rows_mut(0, 3).copy_from(&self.position);
        x.rows_mut(3, 3).copy_from(&self.velocity);
        x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    config: ReferenceConfig,
}

impl Reference {
    pub fn new(config: &ReferenceConfig) -> Self {
        Self { config: *config }
    }

    /// Length of one circuit (m); zero for a hover setpoint.
    pub fn perimeter(&self) -> f64 {
        let c = &self.config;
        match c.kind {
            ReferenceKind::Hover => 0.0,
            ReferenceKind::RoundedRectangle => 4.0 * (c.side - 2.0 * c.corner_radius) + 2.0 * PI * c.corner_radius,
        }
    }

    pub fn at(&self, t: f64) -> ReferencePoint {
        let c = &self.config;
        let center = Vector2::new(c.center[0], c.center[1]);
        let lift = |p: Vector2<f64>| Vector3::new(p.x, p.y, c.altitude);
        let flat = |v: Vector2<f64>| Vector3::new(v.x, v.y, 0.0);
        if c.kind == ReferenceKind::Hover {
            return ReferencePoint {
                position: lift(center),
                velocity: Vector3::zeros(),
            };
        }
        let half = 0.5 * c.side;
        let r = c.corner_radius;
        let straight = c.side - 2.0 * r;
        let arc = FRAC_PI_2 * r;
        let mut s = (c.speed * t).rem_euclid(self.perimeter());
        // south edge, flown towards +x
        let mut start = center + Vector2::new(-half + r, -half);
        for i in 0..4 {
            let th = i as f64 * FRAC_PI_2;
            let d = Vector2::new(th.cos(), th.sin());
            let n = Vector2::new(-d.y, d.x);
            if s < straight {
                return ReferencePoint {
                    position: lift(start + s * d),
                    velocity: flat(c.speed * d),
                };
            }
            s -= straight;
            let pivot = start + straight * d + r * n;
            if s < arc || i == 3 {
                let phi = (s / r).min(FRAC_PI_2);
                return ReferencePoint {
                    position: lift(pivot - r * phi.cos() * n + r * phi.sin() * d),
                    velocity: flat(c.speed * (phi.cos() * d + phi.sin() * n)),
                };
            }
            s -= arc;
            start = pivot + r * d;
        }
        unreachable!("arc length wraps within one circuit")
    }

    /// State references `r_0..r_n` at `t + k·dt`.
    pub fn horizon(&self, t: f64, dt: f64, n: usize) -> Vec<DVector<f64>> {
        (0..=n).map(|k| self.at(t + k as f64 * dt).to_state()).collect()
    }
}
