//! Closed-loop simulation: kinematic end-effector, contact model, F/T sensor
//! and a controller sampled at the control rate.
//!
//! Ticks fall at `t = n/rate`. Between ticks the commanded twist is held and
//! the pose is integrated in equal substeps no longer than `plant_dt`, so the
//! ticks land exactly on the grid. Contacts are evaluated at the ticks.

pub mod config;
pub mod scenarios;
pub mod summary;
pub mod trace;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::admittance::{admittance_step, AdmittanceParams};
use crate::contact::{ContactModel, HandState, GRAVITY};
use crate::controller::{per_axis_margins, CbfController, ConstraintLabel, SafetyLimits};
use crate::qp::QpStatus;
use crate::se3::{integrate_pose, Pose, Twist, Wrench};

pub use config::{
    BiasMode, ConfigError, ContactEvent, ControllerConfig, EventAction, ScenarioConfig,
    SensorConfig,
};
pub use summary::{summarize, RunSummary};
pub use trace::TraceRecord;

#[derive(Debug, Clone)]
enum ControllerState {
    Cbf(CbfController),
    Admittance(AdmittanceParams),
}

/// Linear change of the hanging load weight between `start` and `end`.
#[derive(Debug, Clone, Copy)]
struct LoadRamp {
    start: f64,
    end: f64,
    from: f64,
    to: f64,
}

impl LoadRamp {
    fn weight_at(&self, t: f64) -> f64 {
        if t >= self.end {
            self.to
        } else {
            let s = ((t - self.start) / (self.end - self.start)).clamp(0.0, 1.0);
            self.from + s * (self.to - self.from)
        }
    }
}

/// Pose at plant resolution, logged when requested.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantSample {
    pub t: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    config: ScenarioConfig,
    pose: Pose,
    desired: Pose,
    limits: SafetyLimits,
    contact: ContactModel,
    controller: ControllerState,
    next_event: usize,
    ramp: Option<LoadRamp>,
    rng: ChaCha8Rng,
    noise: [Option<Normal<f64>>; 6],
    bias: Option<Wrench>,
    filtered: Option<Wrench>,
    hand: Option<HandState>,
    human_command: Wrench,
    tick: u64,
    plant_log: Option<Vec<PlantSample>>,
}

impl Simulator {
    pub fn new(config: ScenarioConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let controller = match &config.controller {
            ControllerConfig::Cbf(p) => {
                ControllerState::Cbf(CbfController::new(*p, config.limits).map_err(|e| {
                    ConfigError::Invalid {
                        field: "controller.params".into(),
                        message: e.to_string(),
                    }
                })?)
            }
            ControllerConfig::Admittance(p) => ControllerState::Admittance(*p),
        };
        let std = config.noise_std.to_array();
        let noise = std::array::from_fn(|i| {
            (std[i] > 0.0).then(|| Normal::new(0.0, std[i]).expect("validated noise std"))
        });
        let hand = match &config.contact.model {
            ContactModel::Interactive(_) => Some(HandState::at(config.initial_pose)),
            _ => None,
        };
        Ok(Self {
            pose: config.initial_pose,
            desired: config.desired_pose,
            limits: config.limits,
            contact: config.contact.model.clone(),
            controller,
            next_event: 0,
            ramp: None,
            rng: ChaCha8Rng::seed_from_u64(config.rng_seed),
            noise,
            bias: None,
            filtered: None,
            hand,
            human_command: Wrench::zero(),
            tick: 0,
            plant_log: None,
            config,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    /// Record the pose at every plant substep.
    pub fn enable_plant_log(&mut self) {
        let sample = PlantSample {
            t: self.time(),
            pose: self.pose,
        };
        self.plant_log.get_or_insert_with(|| vec![sample]);
    }

    pub fn take_plant_log(&mut self) -> Vec<PlantSample> {
        self.plant_log
            .as_mut()
            .map(std::mem::take)
            .unwrap_or_default()
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 / self.config.control_rate_hz
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn pose(&self) -> &Pose {
        &self.pose
    }

    pub fn desired(&self) -> &Pose {
        &self.desired
    }

    pub fn limits(&self) -> &SafetyLimits {
        &self.limits
    }

    pub fn contact(&self) -> &ContactModel {
        &self.contact
    }

    /// Whether the configured duration has been covered.
    pub fn finished(&self) -> bool {
        self.tick >= self.config.tick_count()
    }

    pub fn set_target(&mut self, desired: Pose) {
        self.desired = desired;
    }

    pub fn set_limits(&mut self, limits: SafetyLimits) {
        self.limits = limits;
        if let ControllerState::Cbf(c) = &mut self.controller {
            c.set_limits(limits);
        }
    }

    /// Wrench the interactive hand tries to apply, clamped to its envelope.
    /// Returns the clamped value; ignored by non-interactive contacts.
    pub fn set_human_command(&mut self, command: &Wrench) -> Wrench {
        match &self.contact {
            ContactModel::Interactive(grip) => {
                self.human_command = grip.clamp(command);
                self.human_command
            }
            _ => Wrench::zero(),
        }
    }

    pub fn human_command(&self) -> &Wrench {
        &self.human_command
    }

    fn apply_events(&mut self, t: f64) {
        while let Some(event) = self.config.contact.events.get(self.next_event) {
            if event.t > t + 1e-12 {
                break;
            }
            let event = event.clone();
            self.next_event += 1;
            match (&mut self.contact, &event.action) {
                (ContactModel::HangingLoad(load), EventAction::SetLoadWeight { newtons })
                | (ContactModel::HangingLoad(load), EventAction::AddLoadWeight { newtons }) => {
                    let current = load.weight();
                    let target = match event.action {
                        EventAction::SetLoadWeight { .. } => *newtons,
                        _ => (current + newtons).max(0.0),
                    };
                    if event.ramp > 0.0 {
                        self.ramp = Some(LoadRamp {
                            start: event.t,
                            end: event.t + event.ramp,
                            from: current,
                            to: target,
                        });
                    } else {
                        self.ramp = None;
                        load.mass = target / GRAVITY;
                    }
                }
                (ContactModel::Spring(spring), EventAction::SetSpringStiffness { stiffness }) => {
                    spring.stiffness = *stiffness;
                }
                (ContactModel::Spring(spring), EventAction::SetSpringAnchor { anchor }) => {
                    spring.anchor = *anchor;
                }
                // rejected by validation
                _ => {}
            }
        }
        if let (Some(ramp), ContactModel::HangingLoad(load)) = (self.ramp, &mut self.contact) {
            load.mass = ramp.weight_at(t) / GRAVITY;
            if t >= ramp.end {
                self.ramp = None;
            }
        }
    }

    /// Wrench the environment applies at the current pose and time.
    pub fn contact_wrench(&self) -> Wrench {
        let mut w = self.contact.wrench(&self.pose, self.time());
        if let (ContactModel::Interactive(grip), Some(hand)) = (&self.contact, &self.hand) {
            w = w + hand.wrench(grip, &self.pose);
        }
        w
    }

    fn sample_noise(&mut self) -> Wrench {
        let mut n = [0.0; 6];
        for (i, dist) in self.noise.iter().enumerate() {
            if let Some(d) = dist {
                n[i] = d.sample(&mut self.rng);
            }
        }
        Wrench::from_array(n)
    }

    /// One control tick: sense, decide, then hold the twist for one period.
    pub fn step(&mut self) -> TraceRecord {
        let t = self.time();
        self.apply_events(t);

        let raw = self.contact_wrench() + self.config.sensor.tool_gravity + self.sample_noise();
        let bias = match self.config.sensor.bias {
            BiasMode::CaptureAtStart => *self.bias.get_or_insert(raw),
            BiasMode::None => Wrench::zero(),
        };
        let mut measured = raw - bias;
        if let Some(fc) = self.config.sensor.lowpass_cutoff_hz {
            let a = 1.0 - (-2.0 * std::f64::consts::PI * fc / self.config.control_rate_hz).exp();
            let y = match self.filtered {
                Some(prev) => Wrench::from_vector(
                    &(prev.to_vector() + a * (measured.to_vector() - prev.to_vector())),
                ),
                None => measured,
            };
            self.filtered = Some(y);
            measured = y;
        }

        let (twist, slack, active, status, margins) = match &mut self.controller {
            ControllerState::Cbf(c) => {
                let out = c.step(&self.pose, &self.desired, &measured);
                (
                    out.twist,
                    out.slack,
                    out.active_labels,
                    Some(out.qp_status),
                    out.per_axis_margin,
                )
            }
            ControllerState::Admittance(p) => (
                admittance_step(&self.pose, &self.desired, &measured, p),
                0.0,
                Vec::new(),
                None,
                per_axis_margins(&measured, &self.limits),
            ),
        };

        let record = TraceRecord {
            t,
            pose: self.pose,
            twist,
            wrench: measured,
            raw_wrench: raw,
            margins,
            slack,
            active,
            status,
            desired: self.desired,
            limits: *self.limits.w_max(),
        };
        // nothing observes the motion after the last tick
        if self.tick + 1 < self.config.tick_count() {
            self.advance_plant(&twist);
        }
        self.tick += 1;
        record
    }

    fn advance_plant(&mut self, twist: &Twist) {
        let period = self.config.control_period();
        let substeps = ((period / self.config.plant_dt) - 1e-9).ceil().max(1.0) as u64;
        let h = period / substeps as f64;
        let t0 = self.time();
        for k in 0..substeps {
            if let (ContactModel::Interactive(grip), Some(hand)) = (&self.contact, &mut self.hand) {
                hand.advance(grip, &self.pose, &self.human_command, h);
            }
            self.pose = integrate_pose(&self.pose, twist, h);
            if let Some(log) = &mut self.plant_log {
                log.push(PlantSample {
                    t: t0 + (k + 1) as f64 * h,
                    pose: self.pose,
                });
            }
        }
    }

    /// Steps until the configured duration is covered.
    pub fn run_to_end(&mut self) -> Vec<TraceRecord> {
        let mut trace =
            Vec::with_capacity(self.config.tick_count().saturating_sub(self.tick) as usize);
        while !self.finished() {
            trace.push(self.step());
        }
        trace
    }
}

/// Trace and summary of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub summary: RunSummary,
    pub plant_log: Vec<PlantSample>,
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutput, ConfigError> {
    run_scenario_logged(config, false)
}

pub fn run_scenario_logged(
    config: &ScenarioConfig,
    plant_log: bool,
) -> Result<RunOutput, ConfigError> {
    let mut sim = Simulator::new(config.clone())?;
    if plant_log {
        sim.enable_plant_log();
    }
    let trace = sim.run_to_end();
    let summary = summarize(&config.name, &trace);
    Ok(RunOutput {
        trace,
        summary,
        plant_log: sim.take_plant_log(),
    })
}

/// Labels of the constraints active on a tick, joined for logs.
pub fn label_list(active: &[ConstraintLabel]) -> String {
    active
        .iter()
        .map(|l| l.as_str())
        .collect::<Vec<_>>()
        .join(";")
}

/// Status column value; admittance runs have no QP.
pub fn status_str(status: Option<QpStatus>) -> &'static str {
    status.map_or("na", |s| s.as_str())
}
