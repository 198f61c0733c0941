//! Poses, twists and wrenches of the gripper, all expressed in the robot base frame.
//!
//! Orientation error is the rotation vector (axis times angle) of
//! `current * desired⁻¹`, i.e. measured in the base frame. With that choice the
//! time derivative of the error's squared norm under a base-frame angular
//! velocity `ω` is exactly `2 e·ω`, so the CLF row `e·V` is exact for the
//! rotational part as well as the translational one.

use nalgebra::{Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Per-axis names in the fixed order used for wrenches, twists, margins and limits.
pub const AXIS_NAMES: [&str; 6] = ["fx", "fy", "fz", "tx", "ty", "tz"];

/// Gripper pose: position in metres and a unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation,
        }
    }

    pub fn identity() -> Self {
        Self::new(Vector3::zeros(), UnitQuaternion::identity())
    }

    pub fn from_position(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Builds a pose from a scalar-first quaternion `[w, x, y, z]`, normalizing it.
    pub fn from_wxyz(position: [f64; 3], q: [f64; 4]) -> Self {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        Self::new(
            Vector3::from(position),
            UnitQuaternion::from_quaternion(quat),
        )
    }

    /// Scalar-first quaternion coefficients.
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// Same position, orientation rotated by `rotation_vector` (base frame).
    pub fn rotated(&self, rotation_vector: Vector3<f64>) -> Self {
        Self::new(
            self.position,
            UnitQuaternion::from_scaled_axis(rotation_vector) * self.orientation,
        )
    }

    /// Same orientation, position shifted by `delta`.
    pub fn translated(&self, delta: Vector3<f64>) -> Self {
        Self::new(self.position + delta, self.orientation)
    }

    /// Equality up to `tol`, treating the antipodal quaternions `q` and `-q` as equal.
    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        if (self.position - other.position).amax() > tol {
            return false;
        }
        let a = self.orientation.quaternion().coords;
        let b = other.orientation.quaternion().coords;
        (a - b).amax() <= tol || (a + b).amax() <= tol
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    position: [f64; 3],
    /// Scalar-first `[w, x, y, z]`.
    orientation: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        PoseRepr {
            position: self.position.into(),
            orientation: self.wxyz(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        let q = repr.orientation;
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm.is_finite() && norm > 1e-6) {
            return Err(serde::de::Error::custom(
                "orientation must be a non-zero quaternion [w, x, y, z]",
            ));
        }
        if repr.position.iter().any(|p| !p.is_finite()) {
            return Err(serde::de::Error::custom("position must be finite"));
        }
        Ok(Pose::from_wxyz(repr.position, q))
    }
}

/// Spatial velocity command: linear (m/s) then angular (rad/s), base frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Twist {
    pub linear: Vector3<f64>,
    pub angular: Vector3<f64>,
}

impl Twist {
    pub fn new(linear: Vector3<f64>, angular: Vector3<f64>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// `(vx, vy, vz, ωx, ωy, ωz)`.
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        stack(&self.linear, &self.angular)
    }

    pub fn is_finite(&self) -> bool {
        self.linear
            .iter()
            .chain(self.angular.iter())
            .all(|v| v.is_finite())
    }
}

/// Force (N) and torque (N·m) at the end-effector, base frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Wrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

impl Wrench {
    pub fn new(force: Vector3<f64>, torque: Vector3<f64>) -> Self {
        Self { force, torque }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    /// Same value on all three force axes and on all three torque axes.
    pub fn uniform(force: f64, torque: f64) -> Self {
        Self::new(Vector3::repeat(force), Vector3::repeat(torque))
    }

    pub fn from_array(w: [f64; 6]) -> Self {
        Self::from_vector(&Vector6::from(w))
    }

    /// `(fx, fy, fz, τx, τy, τz)`.
    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        stack(&self.force, &self.torque)
    }

    pub fn to_array(&self) -> [f64; 6] {
        self.to_vector().into()
    }

    pub fn is_finite(&self) -> bool {
        self.force
            .iter()
            .chain(self.torque.iter())
            .all(|v| v.is_finite())
    }
}

impl std::ops::Add for Wrench {
    type Output = Wrench;
    fn add(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force + rhs.force, self.torque + rhs.torque)
    }
}

impl std::ops::Sub for Wrench {
    type Output = Wrench;
    fn sub(self, rhs: Wrench) -> Wrench {
        Wrench::new(self.force - rhs.force, self.torque - rhs.torque)
    }
}

impl std::ops::Neg for Wrench {
    type Output = Wrench;
    fn neg(self) -> Wrench {
        Wrench::new(-self.force, -self.torque)
    }
}

/// 6-D pose error: position difference (m) and base-frame rotation vector (rad).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PoseError {
    pub translational: Vector3<f64>,
    pub rotational: Vector3<f64>,
}

impl PoseError {
    pub fn to_vector(&self) -> Vector6<f64> {
        stack(&self.translational, &self.rotational)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            translational: v.fixed_rows::<3>(0).into(),
            rotational: v.fixed_rows::<3>(3).into(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_vector().norm()
    }

    /// `eᵀ diag(weight) e`.
    pub fn weighted_norm_squared(&self, weight: &Vector6<f64>) -> f64 {
        let e = self.to_vector();
        e.component_mul(weight).dot(&e)
    }
}

fn stack(top: &Vector3<f64>, bottom: &Vector3<f64>) -> Vector6<f64> {
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

/// Rotation vector of a unit quaternion, picking the sign that gives an angle in `[0, π]`.
pub fn quaternion_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let q = q.quaternion();
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let s = v.norm();
    if s < 1e-300 {
        return Vector3::zeros();
    }
    let angle = 2.0 * s.atan2(w);
    v * (angle / s)
}

/// Pose error of `current` relative to `desired`.
pub fn pose_error(current: &Pose, desired: &Pose) -> PoseError {
    let relative = current.orientation * desired.orientation.inverse();
    PoseError {
        translational: current.position - desired.position,
        rotational: quaternion_log(&relative),
    }
}

/// Advances `pose` under a constant base-frame twist for `dt` seconds.
pub fn integrate_pose(pose: &Pose, twist: &Twist, dt: f64) -> Pose {
    debug_assert!(dt > 0.0, "integration step must be positive");
    let position = pose.position + twist.linear * dt;
    let delta = UnitQuaternion::from_scaled_axis(twist.angular * dt);
    let q = (delta * pose.orientation).into_inner();
    Pose::new(position, UnitQuaternion::new_normalize(q))
}
