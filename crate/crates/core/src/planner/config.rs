use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal weight given either as one scalar for every entry or as explicit entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diag {
    Scalar(f64),
    Entries(Vec<f64>),
}

impl Diag {
    pub fn to_vector(&self, n: usize, field: &str) -> Result<DVector<f64>> {
        let v = match self {
            Diag::Scalar(s) => DVector::from_element(n, *s),
            Diag::Entries(e) if e.len() == n => DVector::from_column_slice(e),
            Diag::Entries(e) => {
                return Err(Error::config(field, format!("expected {n} entries, got {}", e.len())))
            }
        };
        if v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::config(field, "weights must be finite and nonnegative"));
        }
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shooting {
    Multiple,
    Single,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    /// Horizon length (number of intervals).
    #[serde(rename = "N")]
    pub horizon: usize,
    pub dt: f64,
    pub q_ee: Diag,
    pub q_rep: Diag,
    pub q_s: Diag,
    pub r: Diag,
    pub q_ee_f: Diag,
    pub q_s_f: Diag,
    /// Task-space selection, angular entries first; each entry 0 or 1.
    pub selection: [f64; 6],
    pub d_th1: f64,
    pub d_th2: f64,
    pub k_rep: f64,
    pub alpha: f64,
    /// Pairs farther than this get no distance rows.
    pub activation_radius: f64,
    pub kkt_tol: f64,
    pub defect_tol: f64,
    pub max_iters: usize,
    pub shooting: Shooting,
    /// False reproduces the hard-constraint-only baseline (λ ≡ 1, no repulsion cost).
    pub task_oriented: bool,
    /// Linear and quadratic penalty on the per-node constraint slack.
    pub slack_linear: f64,
    pub slack_quadratic: f64,
    /// Joint-posture weight used when planning back to a stored configuration.
    pub posture_weight: f64,
    /// Wall-clock budget per solve in ms; 0 disables the deadline.
    pub deadline_ms: f64,
    /// Consecutive fallbacks tolerated before the run is aborted.
    pub max_fallbacks: usize,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 50,
            dt: 0.05,
            q_ee: Diag::Scalar(1.0),
            q_rep: Diag::Scalar(0.01),
            q_s: Diag::Scalar(0.01),
            r: Diag::Scalar(1e-9),
            q_ee_f: Diag::Scalar(1.0),
            q_s_f: Diag::Scalar(10.0),
            selection: [1.0; 6],
            d_th1: 0.02,
            d_th2: 0.1,
            k_rep: 1.0,
            alpha: 1.0,
            activation_radius: 0.5,
            kkt_tol: 1e-6,
            defect_tol: 1e-8,
            max_iters: 1000,
            shooting: Shooting::Multiple,
            task_oriented: true,
            slack_linear: 1e4,
            slack_quadratic: 1.0,
            posture_weight: 1.0,
            deadline_ms: 0.0,
            max_fallbacks: 20,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self, dof: usize) -> Result<()> {
        let bad = |field: &str, msg: &str| Err(Error::config(format!("planner.{field}"), msg.to_string()));
        if self.horizon < 1 {
            return bad("N", "horizon must be at least 1");
        }
        if !(self.dt > 0.0) {
            return bad("dt", "must be positive");
        }
        if !(self.d_th1 > 0.0 && self.d_th2 > self.d_th1) {
            return bad("d_th2", "thresholds must satisfy d_th2 > d_th1 > 0");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha", "must be positive");
        }
        if !(self.k_rep >= 0.0) {
            return bad("k_rep", "must be nonnegative");
        }
        if self.selection.iter().any(|&s| s != 0.0 && s != 1.0) {
            return bad("selection", "entries must be 0 or 1");
        }
        if !(self.activation_radius >= self.d_th2) {
            return bad("activation_radius", "must be at least d_th2");
        }
        if !(self.slack_linear > 0.0 && self.slack_quadratic > 0.0) {
            return bad("slack_linear", "slack penalties must be positive");
        }
        self.q_ee.to_vector(6, "planner.q_ee")?;
        self.q_ee_f.to_vector(6, "planner.q_ee_f")?;
        self.q_rep.to_vector(dof, "planner.q_rep")?;
        self.q_s.to_vector(dof, "planner.q_s")?;
        self.r.to_vector(dof, "planner.r")?;
        self.q_s_f.to_vector(dof, "planner.q_s_f")?;
        Ok(())
    }

    /// Hard-constraint-only variant of this configuration.
    pub fn baseline(&self) -> Self {
        Self { task_oriented: false, ..self.clone() }
    }
}
