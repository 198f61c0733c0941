//! Scenario description, JSON (de)serialization, validation and `--set` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::admittance::AdmittanceParams;
use crate::contact::ContactModel;
use crate::controller::{ControllerParams, SafetyLimits};
use crate::se3::{Pose, Wrench};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid scenario JSON: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
pub enum ControllerConfig {
    Cbf(ControllerParams),
    Admittance(AdmittanceParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum EventAction {
    /// Replace the hanging load by one weighing `newtons`.
    SetLoadWeight {
        newtons: f64,
    },
    /// Add `newtons` to the hanging load.
    AddLoadWeight {
        newtons: f64,
    },
    SetSpringStiffness {
        stiffness: [f64; 6],
    },
    SetSpringAnchor {
        anchor: Pose,
    },
}

impl EventAction {
    fn applies_to(&self) -> &'static str {
        match self {
            EventAction::SetLoadWeight { .. } | EventAction::AddLoadWeight { .. } => "hanging_load",
            EventAction::SetSpringStiffness { .. } | EventAction::SetSpringAnchor { .. } => {
                "spring"
            }
        }
    }
}

/// A change to the contact model at time `t`. Load-weight changes may be
/// spread linearly over `ramp` seconds; everything else is a step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactEvent {
    pub t: f64,
    #[serde(default)]
    pub ramp: f64,
    #[serde(flatten)]
    pub action: EventAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactConfig {
    pub model: ContactModel,
    #[serde(default)]
    pub events: Vec<ContactEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// Use the first raw sample as the gravity bias.
    #[default]
    CaptureAtStart,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    /// Gravitational wrench of the tool, present in every raw reading.
    #[serde(default)]
    pub tool_gravity: Wrench,
    #[serde(default)]
    pub bias: BiasMode,
    /// First-order low-pass on the compensated wrench; off when absent.
    #[serde(default)]
    pub lowpass_cutoff_hz: Option<f64>,
}

fn default_name() -> String {
    "scenario".to_string()
}

fn default_rate() -> f64 {
    30.0
}

fn default_plant_dt() -> f64 {
    0.001
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub initial_pose: Pose,
    pub desired_pose: Pose,
    pub controller: ControllerConfig,
    pub limits: SafetyLimits,
    pub contact: ContactConfig,
    #[serde(default)]
    pub sensor: SensorConfig,
    #[serde(default = "default_rate")]
    pub control_rate_hz: f64,
    #[serde(default = "default_plant_dt")]
    pub plant_dt: f64,
    pub duration: f64,
    /// Standard deviation of the zero-mean Gaussian sensor noise, per axis.
    #[serde(default)]
    pub noise_std: Wrench,
    #[serde(default)]
    pub rng_seed: u64,
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        Self::from_path_with_overrides(path, &[])
    }

    /// Loads a scenario and applies `key.path=value` overrides before validation.
    pub fn from_path_with_overrides(
        path: impl AsRef<Path>,
        overrides: &[String],
    ) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base: ScenarioConfig = serde_json::from_str(&text)?;
        base.with_overrides(overrides)
    }

    /// Applies overrides on the fully populated JSON form, so defaulted keys can be set too.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = serde_json::to_value(self)?;
        for entry in overrides {
            let (key, raw) = entry
                .split_once('=')
                .ok_or_else(|| invalid(entry.clone(), "override must look like key.path=value"))?;
            set_dotted(&mut value, key.trim(), parse_override_value(raw.trim()))?;
        }
        let config: ScenarioConfig = serde_json::from_value(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario config always serializes")
    }

    pub fn control_period(&self) -> f64 {
        1.0 / self.control_rate_hz
    }

    /// Number of control ticks, at `t = 0, T, 2T, …` up to and including `duration`.
    pub fn tick_count(&self) -> u64 {
        (self.duration * self.control_rate_hz + 1e-9).floor() as u64 + 1
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(
                    field,
                    format!("must be positive and finite, got {v}"),
                ))
            }
        };
        positive("control_rate_hz", self.control_rate_hz)?;
        positive("plant_dt", self.plant_dt)?;
        positive("duration", self.duration)?;
        if self.control_rate_hz * self.plant_dt > 1.0 + 1e-9 {
            return Err(invalid(
                "control_rate_hz",
                format!(
                    "control rate {} Hz is faster than the plant step {} s allows",
                    self.control_rate_hz, self.plant_dt
                ),
            ));
        }
        if !self.initial_pose.is_finite() {
            return Err(invalid("initial_pose", "must be finite"));
        }
        if !self.desired_pose.is_finite() {
            return Err(invalid("desired_pose", "must be finite"));
        }
        match &self.controller {
            ControllerConfig::Cbf(p) => p
                .validate()
                .map_err(|e| invalid("controller.params", e.to_string()))?,
            ControllerConfig::Admittance(p) => p
                .validate()
                .map_err(|e| invalid("controller.params", e.to_string()))?,
        }
        self.contact
            .model
            .validate()
            .map_err(|e| invalid("contact.model", e.to_string()))?;
        let kind = self.contact.model.kind();
        let mut previous = f64::NEG_INFINITY;
        for (i, event) in self.contact.events.iter().enumerate() {
            let field = format!("contact.events.{i}");
            if !(event.t >= 0.0 && event.t.is_finite()) {
                return Err(invalid(format!("{field}.t"), "must be a non-negative time"));
            }
            if event.t < previous {
                return Err(invalid(format!("{field}.t"), "event times must be sorted"));
            }
            previous = event.t;
            if !(event.ramp >= 0.0 && event.ramp.is_finite()) {
                return Err(invalid(format!("{field}.ramp"), "must be non-negative"));
            }
            if event.action.applies_to() != kind {
                return Err(invalid(
                    format!("{field}.action"),
                    format!(
                        "applies to {} contacts, model is {kind}",
                        event.action.applies_to()
                    ),
                ));
            }
            match &event.action {
                EventAction::SetLoadWeight { newtons }
                    if !(*newtons >= 0.0 && newtons.is_finite()) =>
                {
                    return Err(invalid(
                        format!("{field}.newtons"),
                        "load weight must be non-negative",
                    ));
                }
                EventAction::AddLoadWeight { newtons } if !newtons.is_finite() => {
                    return Err(invalid(format!("{field}.newtons"), "must be finite"));
                }
                EventAction::SetSpringStiffness { stiffness }
                    if stiffness.iter().any(|k| !(*k >= 0.0 && k.is_finite())) =>
                {
                    return Err(invalid(
                        format!("{field}.stiffness"),
                        "must be non-negative",
                    ));
                }
                _ => {}
            }
            if event.ramp > 0.0 && event.action.applies_to() != "hanging_load" {
                return Err(invalid(
                    format!("{field}.ramp"),
                    "only load-weight events can ramp",
                ));
            }
        }
        if self
            .noise_std
            .to_array()
            .iter()
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return Err(invalid("noise_std", "must be non-negative"));
        }
        if !self.sensor.tool_gravity.is_finite() {
            return Err(invalid("sensor.tool_gravity", "must be finite"));
        }
        if let Some(fc) = self.sensor.lowpass_cutoff_hz {
            positive("sensor.lowpass_cutoff_hz", fc)?;
        }
        Ok(())
    }
}

/// Numbers, booleans, arrays and objects parse as JSON; anything else is a string.
fn parse_override_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Sets an existing key addressed by a dotted path; array elements are
/// addressed by index. Unknown keys are rejected.
pub fn set_dotted(root: &mut Value, path: &str, value: Value) -> Result<(), ConfigError> {
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (depth, part) in parts.iter().enumerate() {
        let here = parts[..=depth].join(".");
        node = match node {
            Value::Object(map) => map
                .get_mut(*part)
                .ok_or_else(|| invalid(here.clone(), "no such key in the scenario schema"))?,
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| invalid(here.clone(), "array elements are addressed by index"))?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| {
                    invalid(here.clone(), format!("index out of range (len {len})"))
                })?
            }
            _ => return Err(invalid(here, "cannot descend into a scalar")),
        };
    }
    *node = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::scenarios;

    #[test]
    fn bag_test_round_trips_through_json() {
        let c = scenarios::bag_test();
        let back = ScenarioConfig::from_json_str(&c.to_json_pretty()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn overrides_reach_nested_and_defaulted_keys() {
        let c = scenarios::bag_test();
        let o = c
            .with_overrides(&[
                "controller.params.alpha_force=2".into(),
                "noise_std.force.2=0.5".into(),
                "name=renamed".into(),
            ])
            .unwrap();
        let ControllerConfig::Cbf(p) = o.controller else {
            panic!()
        };
        assert_eq!(p.alpha_force, 2.0);
        assert_eq!(o.noise_std.force.z, 0.5);
        assert_eq!(o.name, "renamed");
    }

    #[test]
    fn overrides_reject_unknown_keys() {
        let c = scenarios::bag_test();
        let err = c
            .with_overrides(&["controller.params.alpah=2".into()])
            .unwrap_err();
        assert!(err.to_string().contains("controller.params.alpah"), "{err}");
        assert!(c.with_overrides(&["duration".into()]).is_err());
        assert!(c.with_overrides(&["limits.force.7=1".into()]).is_err());
        // schema-valid key, invalid value
        assert!(c.with_overrides(&["duration=-1".into()]).is_err());
    }

    #[test]
    fn validation_names_the_field() {
        let mut c = scenarios::bag_test();
        c.control_rate_hz = 2000.0;
        let e = c.validate().unwrap_err();
        assert!(e.to_string().starts_with("control_rate_hz"), "{e}");

        let mut c = scenarios::bag_test();
        c.contact.events.swap(0, 1);
        assert!(c.validate().unwrap_err().to_string().contains("sorted"));

        let mut c = scenarios::bag_test();
        c.contact.events[0].action = EventAction::SetSpringStiffness {
            stiffness: [1.0; 6],
        };
        assert!(c
            .validate()
            .unwrap_err()
            .to_string()
            .contains("contact.events.0.action"));

        let mut c = scenarios::bag_test();
        c.noise_std.torque.x = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tick_count_includes_both_ends() {
        let mut c = scenarios::no_contact();
        c.duration = 1.0;
        c.control_rate_hz = 30.0;
        assert_eq!(c.tick_count(), 31);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(matches!(
            ScenarioConfig::from_path("/nonexistent/scenario.json"),
            Err(ConfigError::Io { .. })
        ));
    }
}
