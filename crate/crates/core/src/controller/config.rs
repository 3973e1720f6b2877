use nalgebra::{DVector, Vector6};
use serde::{Deserialize, Serialize};

use super::{GainSet, NullSpaceShaping};
use crate::error::{Error, Result};
use crate::planner::Diag;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kp1: Diag,
    pub kd1: Diag,
    pub kp2: Diag,
    pub kd2: Diag,
    pub kp3: Diag,
    pub kd3: Diag,
    /// Observer filter time constant in seconds.
    pub k_usde: f64,
    /// Per-joint detection threshold on the torque estimate, N·m.
    pub tau_th: f64,
    /// Contact is considered released once `‖r̂‖∞` stays below this fraction of `tau_th`.
    pub release_fraction: f64,
    /// Seconds a release or resume condition must hold before the mode changes.
    pub dwell: f64,
    /// Joint-space tolerance (rad) for returning to the pre-contact configuration.
    pub resume_tolerance: f64,
    /// Reaction force gain relative to the estimated contact force.
    pub k_f: f64,
    pub null_damping: Diag,
    pub null_bias_compensation: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kp1: Diag::Scalar(200.0),
            kd1: Diag::Scalar(10.0),
            kp2: Diag::Scalar(10.0),
            kd2: Diag::Scalar(2.0),
            kp3: Diag::Scalar(500.0),
            kd3: Diag::Scalar(100.0),
            k_usde: 0.2,
            tau_th: 3.0,
            release_fraction: 0.5,
            dwell: 0.1,
            resume_tolerance: 0.05,
            k_f: 1.0,
            null_damping: Diag::Scalar(10.0),
            null_bias_compensation: true,
        }
    }
}

/// Controller parameters resolved against a model's dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct ControllerSettings {
    pub gains: GainSet,
    pub shaping: NullSpaceShaping,
    pub k_usde: f64,
    pub tau_th: f64,
    pub release_fraction: f64,
    pub dwell: f64,
    pub resume_tolerance: f64,
    pub k_f: f64,
    /// Control period in seconds.
    pub dt: f64,
}

impl ControllerConfig {
    pub fn resolve(&self, dof: usize, dt: f64) -> Result<ControllerSettings> {
        let joint = |d: &Diag, f: &str| d.to_vector(dof, &format!("controller.{f}"));
        let task = |d: &Diag, f: &str| -> Result<Vector6<f64>> {
            let v: DVector<f64> = d.to_vector(6, &format!("controller.{f}"))?;
            Ok(Vector6::from_column_slice(v.as_slice()))
        };
        let positive = |v: f64, f: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(v)
            } else {
                Err(Error::config(format!("controller.{f}"), "must be positive"))
            }
        };
        positive(self.k_usde, "k_usde")?;
        positive(self.tau_th, "tau_th")?;
        positive(self.resume_tolerance, "resume_tolerance")?;
        positive(dt, "dt")?;
        if !(self.release_fraction > 0.0 && self.release_fraction < 1.0) {
            return Err(Error::config("controller.release_fraction", "must lie in (0, 1)"));
        }
        if !(self.dwell >= 0.0) {
            return Err(Error::config("controller.dwell", "must be nonnegative"));
        }
        if !(self.k_f >= 0.0) {
            return Err(Error::config("controller.k_f", "must be nonnegative"));
        }
        Ok(ControllerSettings {
            gains: GainSet {
                kp1: joint(&self.kp1, "kp1")?,
                kd1: joint(&self.kd1, "kd1")?,
                kp2: joint(&self.kp2, "kp2")?,
                kd2: joint(&self.kd2, "kd2")?,
                kp3: task(&self.kp3, "kp3")?,
                kd3: task(&self.kd3, "kd3")?,
            },
            shaping: NullSpaceShaping {
                damping: joint(&self.null_damping, "null_damping")?,
                compensate_bias: self.null_bias_compensation,
            },
            k_usde: self.k_usde,
            tau_th: self.tau_th,
            release_fraction: self.release_fraction,
            dwell: self.dwell,
            resume_tolerance: self.resume_tolerance,
            k_f: self.k_f,
            dt,
        })
    }
}
