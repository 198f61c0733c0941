//! Run-level metrics, computed from the trace alone.

use serde::{Deserialize, Serialize};

use crate::se3::pose_error;

use super::TraceRecord;

/// Pose error below which a run counts as settled.
pub const SETTLING_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub ticks: usize,
    pub max_abs_wrench_per_axis: [f64; 6],
    /// Largest `(|w| − w_max)/w_max` over axes and ticks, zero if never exceeded.
    pub max_limit_violation: f64,
    pub final_pose_error_norm: f64,
    /// First time after which the pose error stays below the threshold.
    pub settling_time: Option<f64>,
    /// Largest drop of the gripper below its target height.
    pub droop_max: f64,
    /// Ticks whose QP was not certified optimal.
    pub qp_fallback_ticks: usize,
}

impl RunSummary {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary always serializes")
    }
}

pub fn summarize(name: &str, trace: &[TraceRecord]) -> RunSummary {
    let mut max_abs = [0.0f64; 6];
    let mut violation = 0.0f64;
    let mut droop = 0.0f64;
    let mut fallbacks = 0;
    let mut settling = None;
    for r in trace {
        let w = r.wrench.to_array();
        let limits = r.limits.to_array();
        for i in 0..6 {
            max_abs[i] = max_abs[i].max(w[i].abs());
            violation = violation.max((w[i].abs() - limits[i]) / limits[i]);
        }
        droop = droop.max(r.desired.position.z - r.pose.position.z);
        if r.status.is_some_and(|s| s != crate::qp::QpStatus::Optimal) {
            fallbacks += 1;
        }
        let e = pose_error(&r.pose, &r.desired).norm();
        if e < SETTLING_THRESHOLD {
            settling.get_or_insert(r.t);
        } else {
            settling = None;
        }
    }
    RunSummary {
        name: name.to_string(),
        ticks: trace.len(),
        max_abs_wrench_per_axis: max_abs,
        max_limit_violation: violation,
        final_pose_error_norm: trace
            .last()
            .map_or(0.0, |r| pose_error(&r.pose, &r.desired).norm()),
        settling_time: settling,
        droop_max: droop,
        qp_fallback_ticks: fallbacks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{Pose, Twist, Wrench};
    use nalgebra::Vector3;

    fn record(t: f64, z: f64, fz: f64) -> TraceRecord {
        TraceRecord {
            t,
            pose: Pose::from_position(0.0, 0.0, z),
            twist: Twist::zero(),
            wrench: Wrench::new(Vector3::new(0.0, 0.0, fz), Vector3::zeros()),
            raw_wrench: Wrench::zero(),
            margins: [0.0; 6],
            slack: 0.0,
            active: vec![],
            status: None,
            desired: Pose::from_position(0.0, 0.0, 1.0),
            limits: Wrench::uniform(25.0, 10.0),
        }
    }

    #[test]
    fn violation_of_a_single_overshoot() {
        let s = summarize("x", &[record(0.0, 1.0, -20.0), record(0.1, 1.0, -26.0)]);
        assert!((s.max_limit_violation - 0.04).abs() < 1e-15);
        assert_eq!(s.max_abs_wrench_per_axis[2], 26.0);
    }

    #[test]
    fn violation_never_negative() {
        let s = summarize("x", &[record(0.0, 1.0, 0.0)]);
        assert_eq!(s.max_limit_violation, 0.0);
    }

    #[test]
    fn settling_restarts_when_error_returns() {
        let trace = [
            record(0.0, 0.9, 0.0),
            record(1.0, 1.0, 0.0),
            record(2.0, 0.99, 0.0),
            record(3.0, 0.9995, 0.0),
            record(4.0, 1.0, 0.0),
        ];
        let s = summarize("x", &trace);
        assert_eq!(s.settling_time, Some(3.0));
        assert!((s.droop_max - 0.1).abs() < 1e-12);
        assert_eq!(summarize("x", &trace[..3]).settling_time, None);
    }
}
