use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::WindConfig;
use crate::dynamics::QuadState;

/// Mean wind plus first-order low-pass filtered white noise per component,
/// advanced with the exact discretization of the filter.
#[derive(Debug, Clone)]
pub struct WindModel {
    config: WindConfig,
    mean: Vector3<f64>,
    gust: Vector3<f64>,
    rng: ChaCha8Rng,
}

impl WindModel {
    /// Starts with the filter state drawn from its stationary distribution.
    pub fn new(config: &WindConfig, seed: u64) -> Self {
        let az = config.azimuth_deg.to_radians();
        let mean = if config.enabled {
            config.mean_speed * Vector3::new(az.cos(), az.sin(), 0.0)
        } else {
            Vector3::zeros()
        };
        let mut w = Self {
            config: *config,
            mean,
            gust: Vector3::zeros(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let sd = w.std_dev();
        w.gust = w.draw().component_mul(&sd);
        w
    }

    fn std_dev(&self) -> Vector3<f64> {
        if !self.config.enabled {
            return Vector3::zeros();
        }
        let s = self.config.variance.sqrt();
        Vector3::new(s, s, if self.config.vertical { s } else { 0.0 })
    }

    fn draw(&mut self) -> Vector3<f64> {
        Vector3::from_fn(|_, _| StandardNormal.sample(&mut self.rng))
    }

    pub fn mean(&self) -> Vector3<f64> {
        self.mean
    }

    /// Current wind velocity (m/s).
    pub fn velocity(&self) -> Vector3<f64> {
        self.mean + self.gust
    }

    pub fn step(&mut self, h: f64) {
        let phi = (-h / self.config.time_constant).exp();
        let scale = self.std_dev() * (1.0 - phi * phi).sqrt();
        let xi = self.draw();
        self.gust = self.gust * phi + xi.component_mul(&scale);
    }

    /// Drag force of the relative air speed on the airframe (N).
    pub fn force(&self, state: &QuadState) -> Vector3<f64> {
        if !self.config.enabled {
            return Vector3::zeros();
        }
        self.config.gain * (self.velocity() - state.velocity)
    }
}
