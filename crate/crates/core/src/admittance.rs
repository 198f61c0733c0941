//! First-order admittance (stiffness) controller used as the comparison baseline.
//!
//! Renders `D·v + K·e = w` per axis: the gripper behaves like a spring-damper
//! around the desired pose.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{pose_error, Pose, Twist, Wrench};

#[derive(Debug, Error, PartialEq)]
pub enum AdmittanceError {
    #[error("admittance stiffness must be non-negative and finite")]
    BadStiffness,
    #[error("admittance damping must be positive and finite")]
    BadDamping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmittanceParams {
    /// N/m on the linear axes, N·m/rad on the angular ones.
    pub stiffness: [f64; 6],
    /// N·s/m on the linear axes, N·m·s/rad on the angular ones.
    #[serde(default = "default_damping")]
    pub damping: [f64; 6],
}

pub fn default_damping() -> [f64; 6] {
    [100.0, 100.0, 100.0, 10.0, 10.0, 10.0]
}

impl AdmittanceParams {
    /// Same stiffness on the linear axes, default damping.
    pub fn with_linear_stiffness(linear: f64, angular: f64) -> Self {
        Self {
            stiffness: [linear, linear, linear, angular, angular, angular],
            damping: default_damping(),
        }
    }

    pub fn validate(&self) -> Result<(), AdmittanceError> {
        if !self.stiffness.iter().all(|k| *k >= 0.0 && k.is_finite()) {
            return Err(AdmittanceError::BadStiffness);
        }
        if !self.damping.iter().all(|d| *d > 0.0 && d.is_finite()) {
            return Err(AdmittanceError::BadDamping);
        }
        Ok(())
    }
}

/// `vᵢ = (wᵢ − Kᵢ·eᵢ) / Dᵢ`.
pub fn admittance_step(
    pose: &Pose,
    desired: &Pose,
    measured_wrench: &Wrench,
    params: &AdmittanceParams,
) -> Twist {
    let e = pose_error(pose, desired).to_vector();
    let k = Vector6::from(params.stiffness);
    let d = Vector6::from(params.damping);
    let v = (measured_wrench.to_vector() - k.component_mul(&e)).component_div(&d);
    Twist::from_vector(&v)
}

/// Static deflection `e = w/K` the controller settles at under a constant wrench.
pub fn static_droop(wrench: f64, stiffness: f64) -> f64 {
    wrench / stiffness
}

/// Whether the sampled loop (zero-order hold of the twist over `period`)
/// against a spring contact of stiffness `environment_stiffness` is stable.
///
/// Per axis the error obeys `e⁺ = (1 − (K + k_env)·T/D)·e`, which is stable
/// iff `0 < (K + k_env)·T/D < 2`.
pub fn sampled_loop_is_stable(
    stiffness: f64,
    environment_stiffness: f64,
    damping: f64,
    period: f64,
) -> bool {
    let gain = (stiffness + environment_stiffness) * period / damping;
    gain > 0.0 && gain < 2.0
}
