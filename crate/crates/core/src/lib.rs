//! Wrench-limiting end-effector control: a per-tick QP that keeps every
//! sensed force/torque axis under its limit while tracking a target pose.
//!
//! ```
//! use wrench_cbf::prelude::*;
//!
//! let limits = SafetyLimits::uniform(25.0, 10.0).unwrap();
//! let mut ctl = CbfController::new(ControllerParams::default(), limits).unwrap();
//! let home = Pose::from_position(0.5, -0.3, 1.0);
//! let out = ctl.step(&home, &home, &Wrench::zero());
//! assert!(out.twist.to_vector().amax() < 1e-12);
//! ```

pub mod admittance;
pub mod contact;
pub mod controller;
pub mod qp;
pub mod se3;
pub mod sim;
pub mod validate;

pub mod prelude {
    pub use crate::admittance::{admittance_step, AdmittanceParams};
    pub use crate::contact::ContactModel;
    pub use crate::controller::{
        control_step, CbfController, ControlOutput, ControllerParams, SafetyLimits,
    };
    pub use crate::qp::{solve, QProblem, QSolution, QpStatus};
    pub use crate::se3::{integrate_pose, pose_error, Pose, Twist, Wrench};
    pub use crate::sim::{run_scenario, RunSummary, ScenarioConfig, Simulator, TraceRecord};
}
