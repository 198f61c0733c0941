//! Built-in scenarios. The files under `scenarios/` are these, serialized.

use nalgebra::Vector3;

use crate::admittance::AdmittanceParams;
use crate::contact::{
    level, ContactModel, HangingLoad, HumanGuide, InteractiveGrip, SpringContact, Waypoint,
};
use crate::controller::{ControllerParams, SafetyLimits};
use crate::se3::Wrench;

use super::config::{
    BiasMode, ContactConfig, ContactEvent, ControllerConfig, EventAction, ScenarioConfig,
    SensorConfig,
};

/// Time the first weight is hung on the gripper.
pub const BAG_FIRST_LOAD_T: f64 = 10.0;
pub const BAG_FIRST_LOAD_N: f64 = 20.0;
/// Time the load is topped up past the force limit.
pub const BAG_SECOND_LOAD_T: f64 = 17.0;
pub const BAG_SECOND_LOAD_N: f64 = 5.25;

pub fn all() -> Vec<ScenarioConfig> {
    vec![
        bag_test(),
        stiffness_comparison(),
        human_guide(),
        no_contact(),
        spring_contact(),
        interactive(),
    ]
}

pub fn by_name(name: &str) -> Option<ScenarioConfig> {
    all().into_iter().find(|c| c.name == name)
}

/// Limits used for shared carrying: tight roll torque, loose pitch and yaw.
pub fn carry_limits() -> SafetyLimits {
    SafetyLimits::new(Wrench::new(
        Vector3::new(10.0, 10.0, 10.0),
        Vector3::new(0.5, 3.0, 3.0),
    ))
    .expect("positive limits")
}

/// Gripper at rest, a bag hung on it at 10 s and overfilled at 17 s.
pub fn bag_test() -> ScenarioConfig {
    let home = level(0.5, -0.3, 1.0);
    ScenarioConfig {
        name: "bag_test".into(),
        initial_pose: home,
        desired_pose: home,
        controller: ControllerConfig::Cbf(ControllerParams::default()),
        limits: SafetyLimits::uniform(25.0, 10.0).expect("positive limits"),
        contact: ContactConfig {
            model: ContactModel::HangingLoad(HangingLoad {
                mass: 0.0,
                rope_attach_offset: Vector3::zeros(),
                ground_height: 0.4,
                ground_stiffness: 10_000.0,
            }),
            events: vec![
                ContactEvent {
                    t: BAG_FIRST_LOAD_T,
                    ramp: 0.0,
                    action: EventAction::SetLoadWeight {
                        newtons: BAG_FIRST_LOAD_N,
                    },
                },
                ContactEvent {
                    t: BAG_SECOND_LOAD_T,
                    ramp: 0.0,
                    action: EventAction::AddLoadWeight {
                        newtons: BAG_SECOND_LOAD_N,
                    },
                },
            ],
        },
        sensor: SensorConfig {
            tool_gravity: Wrench::new(Vector3::new(0.0, 0.0, -7.0), Vector3::new(0.05, -0.1, 0.0)),
            bias: BiasMode::CaptureAtStart,
            lowpass_cutoff_hz: None,
        },
        control_rate_hz: 30.0,
        plant_dt: 0.001,
        duration: 30.0,
        noise_std: Wrench::uniform(0.05, 0.005),
        rng_seed: 7,
    }
}

/// The bag test driven by a 40 N/m admittance controller.
pub fn stiffness_comparison() -> ScenarioConfig {
    ScenarioConfig {
        name: "stiffness_comparison".into(),
        controller: ControllerConfig::Admittance(AdmittanceParams::with_linear_stiffness(
            40.0, 4.0,
        )),
        ..bag_test()
    }
}

/// Free space, started 10 cm and 0.2 rad away from the target.
pub fn no_contact() -> ScenarioConfig {
    let target = level(0.5, 0.0, 0.8);
    ScenarioConfig {
        name: "no_contact".into(),
        initial_pose: target
            .translated(Vector3::new(0.1, 0.0, 0.0))
            .rotated(Vector3::new(0.0, 0.0, 0.2)),
        desired_pose: target,
        controller: ControllerConfig::Cbf(ControllerParams::default()),
        limits: SafetyLimits::uniform(25.0, 10.0).expect("positive limits"),
        contact: ContactConfig {
            model: ContactModel::None,
            events: vec![],
        },
        sensor: SensorConfig::default(),
        control_rate_hz: 30.0,
        plant_dt: 0.001,
        duration: 20.0,
        noise_std: Wrench::zero(),
        rng_seed: 0,
    }
}

/// Pressing down on a 300 N/m surface with a target 10 cm below it.
pub fn spring_contact() -> ScenarioConfig {
    let surface = level(0.5, 0.0, 0.5);
    ScenarioConfig {
        name: "spring_contact".into(),
        initial_pose: surface,
        desired_pose: surface.translated(Vector3::new(0.0, 0.0, -0.1)),
        controller: ControllerConfig::Cbf(ControllerParams::default()),
        limits: SafetyLimits::uniform(25.0, 10.0).expect("positive limits"),
        contact: ContactConfig {
            model: ContactModel::Spring(SpringContact {
                anchor: surface,
                stiffness: [0.0, 0.0, 300.0, 0.0, 0.0, 0.0],
            }),
            events: vec![],
        },
        sensor: SensorConfig::default(),
        control_rate_hz: 30.0,
        plant_dt: 0.001,
        duration: 10.0,
        noise_std: Wrench::zero(),
        rng_seed: 0,
    }
}

/// Terminal point of the scripted guide, relative to the start pose.
pub const GUIDE_DISPLACEMENT: [f64; 3] = [0.03, -0.02, 0.015];

/// A person gripping the object leads the gripper a few centimetres away
/// and then holds still.
pub fn human_guide() -> ScenarioConfig {
    let start = level(0.5, 0.0, 0.8);
    let end = start.translated(Vector3::from(GUIDE_DISPLACEMENT));
    ScenarioConfig {
        name: "human_guide".into(),
        initial_pose: start,
        desired_pose: start,
        controller: ControllerConfig::Cbf(ControllerParams::collaborative_carry()),
        limits: carry_limits(),
        contact: ContactConfig {
            model: ContactModel::HumanGuide(HumanGuide {
                intent_trajectory: vec![
                    Waypoint {
                        t: 1.0,
                        pose: start,
                    },
                    Waypoint { t: 6.0, pose: end },
                ],
                grip_stiffness: [1000.0, 1000.0, 1000.0, 20.0, 20.0, 20.0],
            }),
            events: vec![],
        },
        sensor: SensorConfig::default(),
        control_rate_hz: 30.0,
        plant_dt: 0.001,
        duration: 12.0,
        noise_std: Wrench::zero(),
        rng_seed: 0,
    }
}

/// Hand-in-the-loop scenario driven over the network.
pub fn interactive() -> ScenarioConfig {
    let home = level(0.5, 0.0, 0.8);
    let limits = carry_limits();
    let envelope = Wrench::from_vector(&(2.0 * limits.to_vector()));
    ScenarioConfig {
        name: "interactive".into(),
        initial_pose: home,
        desired_pose: home,
        controller: ControllerConfig::Cbf(ControllerParams::collaborative_carry()),
        limits,
        contact: ContactConfig {
            model: ContactModel::Interactive(InteractiveGrip {
                grip_stiffness: [40.0, 40.0, 40.0, 3.0, 3.0, 3.0],
                hand_gain: 10.0,
                hand_speed_limit: [0.25, 0.1],
                envelope,
            }),
            events: vec![],
        },
        sensor: SensorConfig::default(),
        control_rate_hz: 30.0,
        plant_dt: 0.001,
        duration: 3600.0,
        noise_std: Wrench::zero(),
        rng_seed: 0,
    }
}
