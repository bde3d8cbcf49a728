//! Guidance and adhesion control for a railway running gear with driven
//! independently rotating wheels.
//!
//! The crate contains the control-oriented prediction model, a
//! medium-fidelity plant used as the simulation truth, the adhesion
//! controller, NMPC and LTV-MPC lateral controllers, the torque
//! integration rule and a closed-loop scenario harness.

pub mod adhesion;
pub mod check;
pub mod harness;
pub mod integration;
pub mod model;
pub mod mpc;
pub mod plant;
pub mod qp;
pub mod track;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("arc length {p} outside track [0, {len}]")]
    OutOfRange { p: f64, len: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    Length { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;

pub const GRAVITY: f64 = 9.81;
