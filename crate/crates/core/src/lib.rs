//! GP-based stochastic MPC for a wind-disturbed quadcopter.
//!
//! - [`dynamics`]: nonlinear rigid-body model, hover linearization, exact discretization
//! - [`ssgp`]: state-space Gaussian processes with Kalman-filter inference and online learning
//! - [`smpc`]: augmented predictor, LQR uncertainty tube, chance-constraint tightening, condensing
//! - [`qpsolve`]: ADMM quadratic-program solver with KKT verification
//! - [`harness`]: closed-loop simulation, wind model, metrics, logging

pub mod dynamics;
pub mod harness;
pub mod qpsolve;
pub mod smpc;
pub mod ssgp;
