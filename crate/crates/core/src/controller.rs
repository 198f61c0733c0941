//! Wrench-limited velocity controller.
//!
//! Each tick solves
//!
//! ```text
//! minimize   ‖V‖² + k·γ          over the twist V and slack γ ≥ 0
//! subject to −wᵢ·vᵢ ≤ −α·hᵢ       for each of the six wrench axes
//!            (W e)·V − γ ≤ −(λ/2)·eᵀW e
//! ```
//!
//! with `hᵢ = ½(wᵢ² − wᵢ,max²)`. The per-axis barrier rows carry no contact
//! stiffness: for a diagonal spring contact `ẇᵢ = −kᵢvᵢ`, and any positive
//! `kᵢ` only rescales the admissible rate, so the half-space in `vᵢ` is the
//! same whatever the stiffness is.

use std::fmt;

use nalgebra::{DVector, SVector, Vector6};
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

use crate::qp::{self, Constraint, QProblem, QpError, QpStatus, Solver};
use crate::se3::{pose_error, Pose, PoseError, Twist, Wrench, AXIS_NAMES};

/// Twist coordinates plus the slack.
pub const DECISION_DIM: usize = 7;
const SLACK: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("limit on axis {axis} must be positive and finite, got {value}")]
    BadLimit { axis: &'static str, value: f64 },
    #[error("parameter {name} must be positive and finite, got {value}")]
    BadParameter { name: &'static str, value: f64 },
}

/// Per-axis magnitude limits on the sensed wrench.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Wrench", into = "Wrench")]
pub struct SafetyLimits {
    w_max: Wrench,
}

impl SafetyLimits {
    pub fn new(w_max: Wrench) -> Result<Self, ControllerError> {
        for (axis, value) in AXIS_NAMES.iter().zip(w_max.to_array()) {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ControllerError::BadLimit { axis, value });
            }
        }
        Ok(Self { w_max })
    }

    /// Same limit on every force axis and on every torque axis.
    pub fn uniform(force: f64, torque: f64) -> Result<Self, ControllerError> {
        Self::new(Wrench::uniform(force, torque))
    }

    pub fn w_max(&self) -> &Wrench {
        &self.w_max
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        self.w_max.to_vector()
    }
}

impl TryFrom<Wrench> for SafetyLimits {
    type Error = ControllerError;
    fn try_from(w: Wrench) -> Result<Self, Self::Error> {
        Self::new(w)
    }
}

impl From<SafetyLimits> for Wrench {
    fn from(l: SafetyLimits) -> Wrench {
        l.w_max
    }
}

fn unit_weights() -> [f64; 6] {
    [1.0; 6]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerParams {
    /// Barrier rate on the three force axes.
    pub alpha_force: f64,
    /// Barrier rate on the three torque axes.
    pub alpha_torque: f64,
    /// Lyapunov decay rate.
    pub lambda: f64,
    /// Linear cost on the Lyapunov slack.
    pub slack_weight_k: f64,
    /// Diagonal weight on the pose error inside the Lyapunov function.
    #[serde(default = "unit_weights")]
    pub error_weight: [f64; 6],
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            alpha_force: 1.0,
            alpha_torque: 1.0,
            lambda: 10.0,
            slack_weight_k: 1.0,
            error_weight: unit_weights(),
        }
    }
}

impl ControllerParams {
    /// λ = 10, k = 1, α = 1 on forces and 10 on torques.
    pub fn collaborative_carry() -> Self {
        Self {
            alpha_torque: 10.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        let scalars = [
            ("alpha_force", self.alpha_force),
            ("alpha_torque", self.alpha_torque),
            ("lambda", self.lambda),
            ("slack_weight_k", self.slack_weight_k),
        ];
        for (name, value) in scalars {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ControllerError::BadParameter { name, value });
            }
        }
        for value in self.error_weight {
            if !(value > 0.0 && value.is_finite()) {
                return Err(ControllerError::BadParameter {
                    name: "error_weight",
                    value,
                });
            }
        }
        Ok(())
    }

    pub fn alpha(&self, axis: usize) -> f64 {
        if axis < 3 {
            self.alpha_force
        } else {
            self.alpha_torque
        }
    }

    pub fn weight(&self) -> Vector6<f64> {
        Vector6::from(self.error_weight)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConstraintLabel {
    /// Barrier row for the given axis (0..6 in `AXIS_NAMES` order).
    Cbf(usize),
    Clf,
    SlackNonneg,
}

impl ConstraintLabel {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConstraintLabel::Cbf(0) => "cbf_fx",
            ConstraintLabel::Cbf(1) => "cbf_fy",
            ConstraintLabel::Cbf(2) => "cbf_fz",
            ConstraintLabel::Cbf(3) => "cbf_tx",
            ConstraintLabel::Cbf(4) => "cbf_ty",
            ConstraintLabel::Cbf(5) => "cbf_tz",
            ConstraintLabel::Cbf(_) => "cbf_invalid",
            ConstraintLabel::Clf => "clf",
            ConstraintLabel::SlackNonneg => "slack_nonneg",
        }
    }
}

impl fmt::Display for ConstraintLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ConstraintLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

/// `row · [V; γ] ≤ bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearConstraint {
    pub row: SVector<f64, DECISION_DIM>,
    pub bound: f64,
    pub label: ConstraintLabel,
}

impl LinearConstraint {
    /// Multiplies row and bound by `factor > 0`; the half-space is unchanged.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            row: self.row * factor,
            bound: self.bound * factor,
            label: self.label,
        }
    }

    fn to_qp(self) -> Constraint {
        Constraint::new(DVector::from_column_slice(self.row.as_slice()), self.bound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlOutput {
    pub twist: Twist,
    pub slack: f64,
    pub active_labels: Vec<ConstraintLabel>,
    pub qp_status: QpStatus,
    /// `hᵢ` for the wrench the controller saw; negative means inside the limits.
    pub per_axis_margin: [f64; 6],
    pub kkt_residual: f64,
}

/// `½(w² − w_max²)`: negative inside the limit, zero on it.
pub fn cbf_margin(w: f64, w_max: f64) -> f64 {
    0.5 * (w * w - w_max * w_max)
}

pub fn per_axis_margins(wrench: &Wrench, limits: &SafetyLimits) -> [f64; 6] {
    let w = wrench.to_array();
    let m = limits.w_max.to_array();
    std::array::from_fn(|i| cbf_margin(w[i], m[i]))
}

/// `−w·vᵢ ≤ −α·h(w)` on axis `axis`.
pub fn cbf_constraint_row(w: f64, w_max: f64, alpha: f64, axis: usize) -> LinearConstraint {
    assert!(axis < 6, "axis index out of range");
    let mut row = SVector::<f64, DECISION_DIM>::zeros();
    row[axis] = -w;
    LinearConstraint {
        row,
        bound: -alpha * cbf_margin(w, w_max),
        label: ConstraintLabel::Cbf(axis),
    }
}

/// `(W e)·V − γ ≤ −(λ/2)·eᵀW e`.
pub fn clf_constraint_row(
    error: &PoseError,
    lambda: f64,
    weight: &Vector6<f64>,
) -> LinearConstraint {
    let we = error.to_vector().component_mul(weight);
    let mut row = SVector::<f64, DECISION_DIM>::zeros();
    row.fixed_rows_mut::<6>(0).copy_from(&we);
    row[SLACK] = -1.0;
    LinearConstraint {
        row,
        bound: -0.5 * lambda * error.weighted_norm_squared(weight),
        label: ConstraintLabel::Clf,
    }
}

/// `−γ ≤ 0`.
pub fn slack_constraint_row() -> LinearConstraint {
    let mut row = SVector::<f64, DECISION_DIM>::zeros();
    row[SLACK] = -1.0;
    LinearConstraint {
        row,
        bound: 0.0,
        label: ConstraintLabel::SlackNonneg,
    }
}

/// The eight rows of the controller QP: six barriers, the Lyapunov row, and γ ≥ 0.
pub fn assemble_constraints(
    pose: &Pose,
    desired: &Pose,
    measured_wrench: &Wrench,
    limits: &SafetyLimits,
    params: &ControllerParams,
) -> Vec<LinearConstraint> {
    let w = measured_wrench.to_array();
    let w_max = limits.w_max.to_array();
    let mut rows: Vec<LinearConstraint> = (0..6)
        .map(|i| cbf_constraint_row(w[i], w_max[i], params.alpha(i), i))
        .collect();
    let error = pose_error(pose, desired);
    rows.push(clf_constraint_row(&error, params.lambda, &params.weight()));
    rows.push(slack_constraint_row());
    rows
}

/// Cost `‖V‖² + kγ` written as `½xᵀ diag(2,…,2,0) x + (0,…,0,k)·x`.
/// Fails only on non-finite rows, i.e. a non-finite pose or wrench.
pub fn build_problem(
    rows: &[LinearConstraint],
    params: &ControllerParams,
) -> Result<QProblem, QpError> {
    let mut diag = DVector::from_element(DECISION_DIM, 2.0);
    diag[SLACK] = 0.0;
    let mut linear = DVector::zeros(DECISION_DIM);
    linear[SLACK] = params.slack_weight_k;
    QProblem::new(diag, linear, rows.iter().map(|r| r.to_qp()).collect())
}

/// Solves the QP for already assembled rows. `margins` is only copied into the output.
pub fn solve_rows(
    rows: &[LinearConstraint],
    params: &ControllerParams,
    margins: [f64; 6],
    solver: Option<&mut Solver>,
) -> ControlOutput {
    // halting never increases a spring-contact wrench
    let halt = |status, kkt_residual| ControlOutput {
        twist: Twist::zero(),
        slack: 0.0,
        active_labels: Vec::new(),
        qp_status: status,
        per_axis_margin: margins,
        kkt_residual,
    };
    let Ok(problem) = build_problem(rows, params) else {
        return halt(QpStatus::Uncertified, f64::INFINITY);
    };
    let solution = match solver {
        Some(s) => s.solve(&problem),
        None => qp::solve(&problem),
    };
    if !solution.is_optimal() {
        return halt(solution.status, solution.kkt_residual);
    }
    let x = &solution.x_star;
    let v = Vector6::from_fn(|i, _| x[i]);
    ControlOutput {
        twist: Twist::from_vector(&v),
        slack: x[SLACK],
        active_labels: solution.active_set.iter().map(|&j| rows[j].label).collect(),
        qp_status: solution.status,
        per_axis_margin: margins,
        kkt_residual: solution.kkt_residual,
    }
}

/// One control tick. `measured_wrench` must already be bias-compensated.
pub fn control_step(
    pose: &Pose,
    desired: &Pose,
    measured_wrench: &Wrench,
    limits: &SafetyLimits,
    params: &ControllerParams,
) -> ControlOutput {
    let rows = assemble_constraints(pose, desired, measured_wrench, limits, params);
    solve_rows(
        &rows,
        params,
        per_axis_margins(measured_wrench, limits),
        None,
    )
}

/// Controller instance carrying a warm-start cache between ticks.
#[derive(Debug, Clone)]
pub struct CbfController {
    pub params: ControllerParams,
    pub limits: SafetyLimits,
    solver: Solver,
}

impl CbfController {
    pub fn new(params: ControllerParams, limits: SafetyLimits) -> Result<Self, ControllerError> {
        params.validate()?;
        Ok(Self {
            params,
            limits,
            solver: Solver::new(),
        })
    }

    pub fn step(&mut self, pose: &Pose, desired: &Pose, measured_wrench: &Wrench) -> ControlOutput {
        let rows = assemble_constraints(pose, desired, measured_wrench, &self.limits, &self.params);
        let margins = per_axis_margins(measured_wrench, &self.limits);
        solve_rows(&rows, &self.params, margins, Some(&mut self.solver))
    }

    pub fn set_limits(&mut self, limits: SafetyLimits) {
        self.limits = limits;
        self.solver.reset();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn limits_25_10() -> SafetyLimits {
        SafetyLimits::uniform(25.0, 10.0).unwrap()
    }

    #[test]
    fn margin_values() {
        assert_eq!(cbf_margin(0.0, 25.0), -312.5);
        assert_eq!(cbf_margin(25.0, 25.0), 0.0);
        assert_eq!(cbf_margin(-25.0, 25.0), 0.0);
        assert_eq!(cbf_margin(-26.0, 25.0), 25.5);
    }

    #[test]
    fn barrier_rows() {
        let r = cbf_constraint_row(20.0, 25.0, 1.0, 2);
        assert_eq!(r.row[2], -20.0);
        assert_eq!(r.bound, 112.5);
        assert_eq!(r.row.iter().filter(|v| **v != 0.0).count(), 1);
        assert_eq!(r.bound / r.row[2], -5.625);
        assert_eq!(r.label.as_str(), "cbf_fz");

        let r = cbf_constraint_row(-25.0, 25.0, 1.0, 0);
        assert_eq!(r.row[0], 25.0);
        assert_eq!(r.bound, 0.0);

        let r = cbf_constraint_row(-26.0, 25.0, 1.0, 2);
        assert_eq!(r.row[2], 26.0);
        assert_eq!(r.bound, -25.5);
        assert!((r.bound / r.row[2] + 0.980_769_230_769_230_8).abs() < 1e-15);
        assert_eq!(r.row[SLACK], 0.0);
    }

    #[test]
    fn lyapunov_rows() {
        let w = Vector6::repeat(1.0);
        let zero = clf_constraint_row(&PoseError::default(), 10.0, &w);
        assert_eq!(zero.row.fixed_rows::<6>(0).amax(), 0.0);
        assert_eq!(zero.bound, 0.0);
        assert_eq!(zero.row[SLACK], -1.0);

        let e = PoseError::from_vector(&Vector6::new(0.1, 0.0, 0.0, 0.0, 0.0, 0.0));
        let r = clf_constraint_row(&e, 10.0, &w);
        assert_eq!(r.row[0], 0.1);
        assert!((r.bound + 0.05).abs() < 1e-16);

        let e = PoseError::from_vector(&Vector6::new(0.0, 0.0, 0.2, 0.0, 0.0, 0.0));
        let r = clf_constraint_row(&e, 2.0, &w);
        assert_eq!(r.row[2], 0.2);
        assert!((r.bound + 0.04).abs() < 1e-16);
    }

    #[test]
    fn at_target_without_load_does_nothing() {
        let p = Pose::from_position(0.5, -0.3, 1.0);
        let out = control_step(
            &p,
            &p,
            &Wrench::zero(),
            &limits_25_10(),
            &ControllerParams::default(),
        );
        assert_eq!(out.qp_status, QpStatus::Optimal);
        assert!(out.twist.to_vector().amax() < 1e-14);
        assert!(out.slack.abs() < 1e-14);
    }

    #[test]
    fn relaxed_lyapunov_tracking() {
        let desired = Pose::from_position(0.5, -0.3, 1.0);
        let pose = desired.translated(Vector3::new(0.1, 0.0, 0.0));
        let out = control_step(
            &pose,
            &desired,
            &Wrench::zero(),
            &limits_25_10(),
            &ControllerParams::default(),
        );
        let v = out.twist.to_vector();
        assert!((v[0] + 0.05).abs() < 1e-12, "{v}");
        assert!(v.rows(1, 5).amax() < 1e-12);
        assert!((out.slack - 0.045).abs() < 1e-12);
        assert!(out.active_labels.contains(&ConstraintLabel::Clf));
    }

    #[test]
    fn overload_forces_descent_at_the_barrier_boundary() {
        let p = Pose::from_position(0.5, -0.3, 1.0);
        let w = Wrench::new(Vector3::new(0.0, 0.0, -26.0), Vector3::zeros());
        let out = control_step(&p, &p, &w, &limits_25_10(), &ControllerParams::default());
        let v = out.twist.to_vector();
        assert!((v[2] + 25.5 / 26.0).abs() < 1e-12);
        assert!((v[0].abs() + v[1].abs() + v.rows(3, 3).amax()) < 1e-12);
        // slack covers the Lyapunov violation caused by moving off target: 0·v − γ ≤ 0
        assert!(out.slack.abs() < 1e-12);
        assert!(out.active_labels.contains(&ConstraintLabel::Cbf(2)));
        assert_eq!(out.per_axis_margin[2], 25.5);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SafetyLimits::uniform(0.0, 1.0).is_err());
        assert!(
            SafetyLimits::new(Wrench::from_array([1.0, 1.0, f64::INFINITY, 1.0, 1.0, 1.0]))
                .is_err()
        );
        let p = ControllerParams {
            lambda: -1.0,
            ..Default::default()
        };
        assert!(matches!(
            p.validate(),
            Err(ControllerError::BadParameter { name: "lambda", .. })
        ));
        let mut p = ControllerParams::default();
        p.error_weight[3] = 0.0;
        assert!(p.validate().is_err());
        assert!(
            serde_json::from_str::<SafetyLimits>(r#"{"force":[1,1,1],"torque":[1,-1,1]}"#).is_err()
        );
    }

    fn arb_wrench(scale: f64) -> impl Strategy<Value = Wrench> {
        prop::array::uniform6(-scale..scale).prop_map(Wrench::from_array)
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-0.5..0.5f64),
            prop::array::uniform3(-0.8..0.8f64),
        )
            .prop_map(|(p, r)| Pose::from_position(p[0], p[1], p[2]).rotated(Vector3::from(r)))
    }

    fn arb_params() -> impl Strategy<Value = ControllerParams> {
        (0.1..20.0f64, 0.1..20.0f64, 0.1..20.0f64, 0.1..20.0f64).prop_map(|(af, at, l, k)| {
            ControllerParams {
                alpha_force: af,
                alpha_torque: at,
                lambda: l,
                slack_weight_k: k,
                error_weight: [1.0; 6],
            }
        })
    }

    #[test]
    fn non_finite_input_halts() {
        let p = Pose::from_position(0.0, 0.0, 1.0);
        let w = Wrench::new(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros());
        let out = control_step(&p, &p, &w, &limits_25_10(), &ControllerParams::default());
        assert_eq!(out.twist, Twist::zero());
        assert_eq!(out.qp_status, QpStatus::Uncertified);
    }

    proptest! {
        #[test]
        fn barrier_condition_always_holds(pose in arb_pose(), desired in arb_pose(), w in arb_wrench(40.0), params in arb_params()) {
            let limits = limits_25_10();
            let out = control_step(&pose, &desired, &w, &limits, &params);
            prop_assert_eq!(out.qp_status, QpStatus::Optimal);
            prop_assert!(out.slack >= -1e-10);
            let v = out.twist.to_vector();
            let wv = w.to_vector();
            let m = limits.to_vector();
            for i in 0..6 {
                let h = cbf_margin(wv[i], m[i]);
                prop_assert!(-wv[i] * v[i] <= -params.alpha(i) * h + 1e-8);
                prop_assert_eq!(out.per_axis_margin[i], h);
            }
        }

        #[test]
        fn feasible_whenever_inside_limits(pose in arb_pose(), desired in arb_pose(), w in arb_wrench(9.99), params in arb_params()) {
            let out = control_step(&pose, &desired, &w, &limits_25_10(), &params);
            prop_assert_eq!(out.qp_status, QpStatus::Optimal);
        }

        #[test]
        fn stiffness_scaling_leaves_output_unchanged(
            pose in arb_pose(), desired in arb_pose(), w in arb_wrench(40.0),
            k in prop::array::uniform6(1e-3..100.0f64), params in arb_params(),
        ) {
            let limits = limits_25_10();
            let rows = assemble_constraints(&pose, &desired, &w, &limits, &params);
            let scaled: Vec<_> = rows.iter().enumerate()
                .map(|(j, r)| if j < 6 { r.scaled(k[j]) } else { *r })
                .collect();
            let margins = per_axis_margins(&w, &limits);
            let a = solve_rows(&rows, &params, margins, None);
            let b = solve_rows(&scaled, &params, margins, None);
            let diff = (a.twist.to_vector() - b.twist.to_vector()).amax();
            prop_assert!(diff < 1e-9, "diff {diff:e} a {:?} b {:?} {:?} {:?}", a.twist, b.twist, a.active_labels, b.active_labels);
            prop_assert!((a.slack - b.slack).abs() < 1e-9);
        }

        #[test]
        fn axes_decouple_at_zero_error(pose in arb_pose(), w in arb_wrench(40.0), other in arb_wrench(40.0), axis in 0usize..6) {
            let limits = limits_25_10();
            let params = ControllerParams::default();
            let mut mixed = other.to_array();
            mixed[axis] = w.to_array()[axis];
            let a = control_step(&pose, &pose, &w, &limits, &params);
            let b = control_step(&pose, &pose, &Wrench::from_array(mixed), &limits, &params);
            prop_assert!((a.twist.to_vector()[axis] - b.twist.to_vector()[axis]).abs() < 1e-9);
        }

        #[test]
        fn inactive_barriers_give_closed_form(pose in arb_pose(), desired in arb_pose(), params in arb_params()) {
            let out = control_step(&pose, &desired, &Wrench::zero(), &limits_25_10(), &params);
            let e = pose_error(&pose, &desired);
            let rate = params.lambda.min(params.slack_weight_k);
            let expected = -(rate / 2.0) * e.to_vector();
            let gamma = ((params.lambda - params.slack_weight_k) / 2.0 * e.norm().powi(2)).max(0.0);
            prop_assert!((out.twist.to_vector() - expected).amax() < 1e-7);
            prop_assert!((out.slack - gamma).abs() < 1e-7);
        }
    }

    #[test]
    fn warm_controller_matches_pure_step() {
        let limits = limits_25_10();
        let params = ControllerParams::default();
        let mut ctl = CbfController::new(params, limits).unwrap();
        let desired = Pose::from_position(0.5, -0.3, 1.0);
        for i in 0..300 {
            let t = i as f64 * 0.05;
            let pose = desired.translated(Vector3::new(0.05 * t.sin(), 0.0, -0.02 * t));
            let w = Wrench::new(
                Vector3::new(3.0 * t.cos(), 0.0, -20.0 - 0.03 * i as f64),
                Vector3::zeros(),
            );
            let warm = ctl.step(&pose, &desired, &w);
            let cold = control_step(&pose, &desired, &w, &limits, &params);
            assert!((warm.twist.to_vector() - cold.twist.to_vector()).amax() < 1e-9);
        }
    }
}
