//! Environment models producing the wrench sensed at the end-effector.
//!
//! Sign convention: the wrench the environment exerts on the gripper, base frame.

use nalgebra::{UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::se3::{integrate_pose, pose_error, Pose, Twist, Wrench};

pub const GRAVITY: f64 = 9.81;
pub const DEFAULT_GROUND_STIFFNESS: f64 = 10_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum ContactError {
    #[error("{0} must be non-negative and finite")]
    Negative(&'static str),
    #[error("{0} must be positive and finite")]
    NonPositive(&'static str),
    #[error("human guide trajectory is empty")]
    EmptyTrajectory,
    #[error("human guide waypoint times must be strictly increasing")]
    UnsortedTrajectory,
}

fn check_nonneg(name: &'static str, values: &[f64]) -> Result<(), ContactError> {
    if values.iter().all(|v| *v >= 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(ContactError::Negative(name))
    }
}

fn check_positive(name: &'static str, values: &[f64]) -> Result<(), ContactError> {
    if values.iter().all(|v| *v > 0.0 && v.is_finite()) {
        Ok(())
    } else {
        Err(ContactError::NonPositive(name))
    }
}

/// `−K ⊙ e` for a diagonal stiffness.
fn diagonal_spring(stiffness: &[f64; 6], error: &Vector6<f64>) -> Wrench {
    Wrench::from_vector(&(-Vector6::from(*stiffness).component_mul(error)))
}

/// Linear spring anchored at the pose where contact was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpringContact {
    pub anchor: Pose,
    /// N/m on the force axes, N·m/rad on the torque axes.
    pub stiffness: [f64; 6],
}

impl SpringContact {
    pub fn validate(&self) -> Result<(), ContactError> {
        check_nonneg("spring stiffness", &self.stiffness)
    }
}

pub fn spring_wrench(model: &SpringContact, pose: &Pose) -> Wrench {
    diagonal_spring(
        &model.stiffness,
        &pose_error(pose, &model.anchor).to_vector(),
    )
}

/// A mass hanging from the gripper that can come to rest on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HangingLoad {
    /// kg
    pub mass: f64,
    /// Load position relative to the gripper, base frame (m). Also the lever arm for torques.
    #[serde(default)]
    pub rope_attach_offset: Vector3<f64>,
    /// Height of the load's lowest point at which it touches the ground (m).
    pub ground_height: f64,
    #[serde(default = "default_ground_stiffness")]
    pub ground_stiffness: f64,
}

fn default_ground_stiffness() -> f64 {
    DEFAULT_GROUND_STIFFNESS
}

impl HangingLoad {
    pub fn validate(&self) -> Result<(), ContactError> {
        check_nonneg("load mass", &[self.mass])?;
        check_positive("ground stiffness", &[self.ground_stiffness])?;
        if !self.ground_height.is_finite() || self.rope_attach_offset.iter().any(|v| !v.is_finite())
        {
            return Err(ContactError::Negative("load geometry"));
        }
        Ok(())
    }

    pub fn weight(&self) -> f64 {
        self.mass * GRAVITY
    }

    pub fn load_height(&self, pose: &Pose) -> f64 {
        pose.position.z + self.rope_attach_offset.z
    }

    /// Part of the weight carried by the ground, in `[0, m·g]`.
    pub fn ground_share(&self, pose: &Pose) -> f64 {
        let compression = (self.ground_height - self.load_height(pose)).max(0.0);
        (self.ground_stiffness * compression).clamp(0.0, self.weight())
    }
}

pub fn hanging_wrench(model: &HangingLoad, pose: &Pose) -> Wrench {
    let force = Vector3::new(0.0, 0.0, -(model.weight() - model.ground_share(pose)));
    Wrench::new(force, model.rope_attach_offset.cross(&force))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub pose: Pose,
}

/// Scripted stand-in for a person holding the shared object: a diagonal grip
/// spring pulling the gripper towards a moving intent pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanGuide {
    pub intent_trajectory: Vec<Waypoint>,
    pub grip_stiffness: [f64; 6],
}

impl HumanGuide {
    pub fn validate(&self) -> Result<(), ContactError> {
        check_nonneg("grip stiffness", &self.grip_stiffness)?;
        if self.intent_trajectory.is_empty() {
            return Err(ContactError::EmptyTrajectory);
        }
        let sorted = self.intent_trajectory.windows(2).all(|w| w[1].t > w[0].t);
        if !sorted
            || self
                .intent_trajectory
                .iter()
                .any(|w| !w.t.is_finite() || !w.pose.is_finite())
        {
            return Err(ContactError::UnsortedTrajectory);
        }
        Ok(())
    }

    /// Piecewise-linear position and slerped orientation, clamped at both ends.
    pub fn intent_at(&self, t: f64) -> Pose {
        let traj = &self.intent_trajectory;
        let first = &traj[0];
        let last = &traj[traj.len() - 1];
        if t <= first.t {
            return first.pose;
        }
        if t >= last.t {
            return last.pose;
        }
        let i = traj.partition_point(|w| w.t <= t);
        let (a, b) = (&traj[i - 1], &traj[i]);
        let s = (t - a.t) / (b.t - a.t);
        let position = a.pose.position.lerp(&b.pose.position, s);
        let orientation = a
            .pose
            .orientation
            .try_slerp(&b.pose.orientation, s, 1e-12)
            .unwrap_or(a.pose.orientation);
        Pose::new(position, orientation)
    }

    /// Time at which the intent stops moving.
    pub fn end_time(&self) -> f64 {
        self.intent_trajectory.last().map_or(0.0, |w| w.t)
    }
}

pub fn human_guide_wrench(model: &HumanGuide, pose: &Pose, t: f64) -> Wrench {
    let intent = model.intent_at(t);
    diagonal_spring(
        &model.grip_stiffness,
        &pose_error(pose, &intent).to_vector(),
    )
}

/// A person's hand gripping the end-effector through a compliant grasp.
///
/// The hand chases the offset at which the grasp spring would transmit the
/// commanded wrench, at bounded speed. When the robot yields the hand has to
/// follow, so the transmitted wrench is whatever the robot lets through.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InteractiveGrip {
    pub grip_stiffness: [f64; 6],
    /// Proportional gain of the hand on its offset error (1/s).
    #[serde(default = "default_hand_gain")]
    pub hand_gain: f64,
    /// Largest hand speed, m/s on the linear axes and rad/s on the angular ones.
    #[serde(default = "default_hand_speed")]
    pub hand_speed_limit: [f64; 2],
    /// Largest wrench magnitude a client may command, per axis.
    pub envelope: Wrench,
}

fn default_hand_gain() -> f64 {
    10.0
}

fn default_hand_speed() -> [f64; 2] {
    [0.25, 0.1]
}

impl InteractiveGrip {
    pub fn validate(&self) -> Result<(), ContactError> {
        check_positive("grip stiffness", &self.grip_stiffness)?;
        check_positive("hand gain", &[self.hand_gain])?;
        check_positive("hand speed limit", &self.hand_speed_limit)?;
        check_nonneg("wrench envelope", &self.envelope.to_array())
    }

    /// Per-axis clamp of a commanded wrench to the envelope.
    pub fn clamp(&self, w: &Wrench) -> Wrench {
        let env = self.envelope.to_array();
        let w = w.to_array();
        Wrench::from_array(std::array::from_fn(|i| {
            if w[i].is_finite() {
                w[i].clamp(-env[i], env[i])
            } else {
                0.0
            }
        }))
    }
}

/// Where the interactive hand currently is.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandState {
    pub pose: Pose,
}

impl HandState {
    pub fn at(pose: Pose) -> Self {
        Self { pose }
    }

    /// Wrench transmitted to the gripper at `robot`.
    pub fn wrench(&self, grip: &InteractiveGrip, robot: &Pose) -> Wrench {
        diagonal_spring(
            &grip.grip_stiffness,
            &pose_error(robot, &self.pose).to_vector(),
        )
    }

    pub fn advance(&mut self, grip: &InteractiveGrip, robot: &Pose, command: &Wrench, dt: f64) {
        let k = Vector6::from(grip.grip_stiffness);
        let target = command.to_vector().component_div(&k);
        let offset = pose_error(&self.pose, robot).to_vector();
        let mut u = (target - offset) * grip.hand_gain;
        for i in 0..6 {
            let limit = grip.hand_speed_limit[i / 3];
            u[i] = u[i].clamp(-limit, limit);
        }
        self.pose = integrate_pose(&self.pose, &Twist::from_vector(&u), dt);
    }
}

/// Contact model selected by a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContactModel {
    None,
    Spring(SpringContact),
    HangingLoad(HangingLoad),
    HumanGuide(HumanGuide),
    Interactive(InteractiveGrip),
}

impl ContactModel {
    pub fn validate(&self) -> Result<(), ContactError> {
        match self {
            ContactModel::None => Ok(()),
            ContactModel::Spring(m) => m.validate(),
            ContactModel::HangingLoad(m) => m.validate(),
            ContactModel::HumanGuide(m) => m.validate(),
            ContactModel::Interactive(m) => m.validate(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ContactModel::None => "none",
            ContactModel::Spring(_) => "spring",
            ContactModel::HangingLoad(_) => "hanging_load",
            ContactModel::HumanGuide(_) => "human_guide",
            ContactModel::Interactive(_) => "interactive",
        }
    }

    /// Wrench for the stateless models. The interactive hand is evaluated by
    /// the simulator, which owns the hand state; here it contributes nothing.
    pub fn wrench(&self, pose: &Pose, t: f64) -> Wrench {
        match self {
            ContactModel::None | ContactModel::Interactive(_) => Wrench::zero(),
            ContactModel::Spring(m) => spring_wrench(m, pose),
            ContactModel::HangingLoad(m) => hanging_wrench(m, pose),
            ContactModel::HumanGuide(m) => human_guide_wrench(m, pose, t),
        }
    }

    /// Largest stiffness of the model, used as its Lipschitz scale.
    pub fn max_stiffness(&self) -> f64 {
        let max = |k: &[f64; 6]| k.iter().copied().fold(0.0, f64::max);
        match self {
            ContactModel::None => 0.0,
            ContactModel::Spring(m) => max(&m.stiffness),
            ContactModel::HangingLoad(m) => m.ground_stiffness,
            ContactModel::HumanGuide(m) => max(&m.grip_stiffness),
            ContactModel::Interactive(m) => max(&m.grip_stiffness),
        }
    }
}

/// Identity orientation helper for scenario builders.
pub fn level(x: f64, y: f64, z: f64) -> Pose {
    Pose::new(Vector3::new(x, y, z), UnitQuaternion::identity())
}
