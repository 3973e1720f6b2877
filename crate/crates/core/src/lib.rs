//! Multi-layered safety for redundant serial manipulators.
//!
//! * [`model`]: serial-chain kinematics and rigid-body dynamics.
//! * [`geometry`]: sphere/capsule distance queries with configuration-space gradients.
//! * [`planner`]: receding-horizon planner with task-oriented obstacle avoidance,
//!   transcribed by multiple (or single) shooting and solved by an active-set QP.
//! * [`controller`]: 1 kHz computed-torque tracking, external-torque estimation,
//!   contact detection and contact-safe reaction with a four-phase mode machine.
//! * [`sim`]: deterministic closed-loop simulation driven by scenario files.
//! * [`cli`]: the `safe-manip` command-line entry points.

pub mod cli;
pub mod controller;
pub mod error;
pub mod geometry;
pub mod model;
pub mod planner;
pub mod sim;

pub use error::{Error, Result};
