//! Closed-loop simulation: wind, reference trajectory, disturbance extraction,
//! online GP training, the nominal to GP-MPC switch, logging and metrics.

mod compare;
mod config;
mod episode;
mod reference;
mod report;
mod selftest;
mod wind;

pub use compare::{compare, Comparison, ComparisonRow};
pub use config::{ControlConfig, ReferenceConfig, ReferenceKind, ScenarioConfig, WindConfig};
pub use episode::{
    extract_disturbance, rms_error, run_episode, Abort, ControlMode, Episode, EpisodeMetrics,
    FlightLog, GpTraceRecord, LogRecord, TimingRecord,
};
pub use reference::{Reference, ReferencePoint};
pub use report::{
    write_comparison_csv, write_episode, write_gp_trace_csv, write_summary, write_timings_csv,
    write_trajectory_csv, GP_TRACE_COLUMNS, TIMING_COLUMNS, TRAJECTORY_COLUMNS,
};
pub use selftest::{gp_selftest, SelftestReport};
pub use wind::WindModel;

use crate::smpc::SmpcError;
use crate::ssgp::GpError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("empty log")]
    EmptyLog,
    #[error("non-positive interval {0}")]
    Interval(f64),
    #[error("controller: {0}")]
    Smpc(#[from] SmpcError),
    #[error("GP: {0}")]
    Gp(#[from] GpError),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),
}
