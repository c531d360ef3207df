use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dynamics::QuadParams;
use crate::qpsolve::QpSettings;
use crate::smpc::MpcConfig;
use crate::ssgp::GpConfig;

/// Control loop rates and the GP switching rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    /// MPC recompute rate (Hz). Must be an integer multiple of `1/ΔT`.
    pub rate_hz: f64,
    /// Learn disturbances and switch to the GP controller.
    pub use_gp: bool,
    /// Hyperparameter updates every GP needs before the switch.
    pub switch_after: usize,
    /// Gradient steps per GP per predictor interval.
    pub train_steps: usize,
    /// Upper bound on the truth integration step (s).
    pub sim_dt_max: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            rate_hz: 30.0,
            use_gp: true,
            switch_after: 50,
            train_steps: 1,
            sim_dt_max: 0.002,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Fixed setpoint at `center + (0, 0, altitude)`.
    Hover,
    /// Closed circuit of four straights joined by quarter circles, flown
    /// counter-clockwise at constant speed.
    RoundedRectangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    pub kind: ReferenceKind,
    /// Horizontal center (m).
    pub center: [f64; 2],
    pub altitude: f64,
    /// Outer side length (m).
    pub side: f64,
    pub corner_radius: f64,
    /// Path speed (m/s).
    pub speed: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            kind: ReferenceKind::RoundedRectangle,
            center: [0.0, 0.0],
            altitude: 2.0,
            side: 10.0,
            corner_radius: 2.0,
            speed: 1.0,
        }
    }
}

/// Filtered-noise wind acting through a linear drag on the relative air speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WindConfig {
    pub enabled: bool,
    /// Mean wind speed (m/s).
    pub mean_speed: f64,
    /// Direction the mean wind blows towards, from the +x axis (deg).
    pub azimuth_deg: f64,
    /// Stationary variance of each wind velocity component ((m/s)²).
    pub variance: f64,
    /// Filter time constant (s).
    pub time_constant: f64,
    /// Drag coefficient mapping relative air speed to force (N·s/m).
    pub gain: f64,
    /// Also perturb the vertical component.
    pub vertical: bool,
}

impl Default for WindConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            mean_speed: 22.0,
            azimuth_deg: 45.0,
            variance: 24.0,
            time_constant: 2.0,
            gain: 0.085,
            vertical: true,
        }
    }
}

/// A complete closed-loop scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Simulated time (s).
    pub duration: f64,
    /// Start position relative to the reference at `t = 0` (m).
    pub initial_offset: [f64; 3],
    pub quad: QuadParams,
    pub mpc: MpcConfig,
    pub qp: QpSettings,
    pub gp: GpConfig,
    pub control: ControlConfig,
    pub reference: ReferenceConfig,
    pub wind: WindConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            duration: 40.0,
            initial_offset: [0.0; 3],
            quad: QuadParams::default(),
            mpc: MpcConfig::default(),
            qp: QpSettings::default(),
            gp: GpConfig::default(),
            control: ControlConfig::default(),
            reference: ReferenceConfig::default(),
            wind: WindConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Control ticks per predictor interval.
    pub fn ticks_per_interval(&self) -> usize {
        (self.control.rate_hz * self.mpc.dt).round() as usize
    }

    /// Truth integration steps per control tick.
    pub fn substeps(&self) -> usize {
        (1.0 / (self.control.rate_hz * self.control.sim_dt_max) - 1e-9).ceil() as usize
    }

    pub fn sim_dt(&self) -> f64 {
        1.0 / (self.control.rate_hz * self.substeps() as f64)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let cfg_err = |m: String| Err(HarnessError::Config(m));
        self.quad
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.mpc
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.duration > 0.0) || !self.duration.is_finite() {
            return cfg_err(format!("duration = {}", self.duration));
        }
        if self.initial_offset.iter().any(|v| !v.is_finite()) {
            return cfg_err("initial offset must be finite".into());
        }
        let c = &self.control;
        if !(c.rate_hz > 0.0) || !c.rate_hz.is_finite() {
            return cfg_err(format!("rate_hz = {}", c.rate_hz));
        }
        let ratio = c.rate_hz * self.mpc.dt;
        if ratio < 1.0 - 1e-9 {
            return cfg_err(format!(
                "recompute rate {} Hz is below the predictor rate {} Hz",
                c.rate_hz,
                1.0 / self.mpc.dt
            ));
        }
        if (ratio - ratio.round()).abs() > 1e-9 {
            return cfg_err(format!(
                "recompute rate {} Hz is not a multiple of the predictor rate",
                c.rate_hz
            ));
        }
        if !(c.sim_dt_max > 0.0) {
            return cfg_err(format!("sim_dt_max = {}", c.sim_dt_max));
        }
        if c.use_gp && c.train_steps == 0 && c.switch_after > 0 {
            return cfg_err("GP mode can never be reached with train_steps = 0".into());
        }
        if self.gp.batch_size < 2 || self.gp.order == 0 {
            return cfg_err("GP batch size must be at least 2 and order positive".into());
        }
        let r = &self.reference;
        if r.kind == ReferenceKind::RoundedRectangle {
            if !(r.speed > 0.0) || !(r.side > 0.0) {
                return cfg_err("reference speed and side must be positive".into());
            }
            if !(r.corner_radius > 0.0) || 2.0 * r.corner_radius > r.side {
                return cfg_err(format!(
                    "corner radius {} does not fit a side of {}",
                    r.corner_radius, r.side
                ));
            }
        }
        let w = &self.wind;
        if !(w.variance >= 0.0) || !(w.time_constant > 0.0) || !(w.gain >= 0.0) || !w.mean_speed.is_finite() {
            return cfg_err("wind variance and gain must be non-negative, time constant positive".into());
        }
        Ok(())
    }
}
