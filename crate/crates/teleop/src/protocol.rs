//! Wire messages. Every message is a JSON object with a `type` tag and a
//! schema version `v`.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use wrench_cbf::controller::SafetyLimits;
use wrench_cbf::se3::{Pose, Wrench};
use wrench_cbf::sim::{status_str, TraceRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandKind {
    ApplyWrench,
    SetTarget,
    SetLimits,
    Pause,
    Reset,
}

/// A client request as it arrives. The payload is checked against `kind`
/// by [`CommandMessage::decode`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandMessage {
    pub kind: CommandKind,
    #[serde(default)]
    pub payload: Value,
    pub client_id: String,
    pub sequence_number: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    /// Six components, N then N·m.
    ApplyWrench(Wrench),
    SetTarget(Pose),
    SetLimits(SafetyLimits),
    Pause(bool),
    Reset,
}

impl CommandMessage {
    pub fn new(
        kind: CommandKind,
        payload: Value,
        client_id: impl Into<String>,
        sequence_number: u64,
    ) -> Self {
        Self {
            kind,
            payload,
            client_id: client_id.into(),
            sequence_number,
        }
    }

    pub fn apply_wrench(w: [f64; 6], client_id: impl Into<String>, sequence_number: u64) -> Self {
        Self::new(
            CommandKind::ApplyWrench,
            serde_json::json!(w),
            client_id,
            sequence_number,
        )
    }

    /// Checks the payload. `pause` takes an optional boolean (default true);
    /// `reset` ignores its payload.
    pub fn decode(&self) -> Result<Command, String> {
        let p = &self.payload;
        match self.kind {
            CommandKind::ApplyWrench => {
                let w: [f64; 6] = serde_json::from_value(p.clone())
                    .map_err(|_| "apply_wrench payload must be 6 numbers".to_string())?;
                if w.iter().any(|v| !v.is_finite()) {
                    return Err("apply_wrench payload must be finite".into());
                }
                Ok(Command::ApplyWrench(Wrench::from_array(w)))
            }
            CommandKind::SetTarget => serde_json::from_value(p.clone())
                .map(Command::SetTarget)
                .map_err(|e| format!("set_target payload: {e}")),
            CommandKind::SetLimits => {
                let w: [f64; 6] = serde_json::from_value(p.clone())
                    .map_err(|_| "set_limits payload must be 6 numbers".to_string())?;
                SafetyLimits::new(Wrench::from_array(w))
                    .map(Command::SetLimits)
                    .map_err(|e| e.to_string())
            }
            CommandKind::Pause => match p {
                Value::Null => Ok(Command::Pause(true)),
                Value::Bool(b) => Ok(Command::Pause(*b)),
                _ => Err("pause payload must be a boolean".into()),
            },
            CommandKind::Reset => Ok(Command::Reset),
        }
    }

    pub fn to_wire(&self) -> String {
        let mut v = serde_json::to_value(self).expect("plain data");
        let obj = v.as_object_mut().expect("struct");
        obj.insert("type".into(), "command".into());
        obj.insert("v".into(), SCHEMA_VERSION.into());
        v.to_string()
    }
}

/// Reads a client text frame. The error text is sent back in a rejection.
pub fn parse_client_message(text: &str) -> Result<CommandMessage, Rejection> {
    let reject = |reason: String| Rejection {
        reason,
        client_id: None,
        sequence_number: None,
    };
    let mut value: Value =
        serde_json::from_str(text).map_err(|e| reject(format!("not JSON: {e}")))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| reject("expected an object".into()))?;
    match obj.remove("type") {
        Some(Value::String(t)) if t == "command" => {}
        Some(other) => return Err(reject(format!("unknown message type {other}"))),
        None => return Err(reject("missing type".into())),
    }
    match obj.remove("v") {
        Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
        Some(v) => return Err(reject(format!("unsupported schema version {v}"))),
        None => return Err(reject("missing v".into())),
    }
    let client_id = obj
        .get("client_id")
        .and_then(Value::as_str)
        .map(str::to_owned);
    let sequence_number = obj.get("sequence_number").and_then(Value::as_u64);
    serde_json::from_value(value).map_err(|e| Rejection {
        reason: e.to_string(),
        client_id,
        sequence_number,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub t: f64,
    pub pose: Pose,
    pub compensated_wrench: [f64; 6],
    pub per_axis_margin: [f64; 6],
    pub limits: [f64; 6],
    pub slack: f64,
    pub qp_status: String,
}

impl From<&TraceRecord> for StateMessage {
    fn from(r: &TraceRecord) -> Self {
        Self {
            t: r.t,
            pose: r.pose,
            compensated_wrench: r.wrench.to_array(),
            per_axis_margin: r.margins,
            limits: r.limits.to_array(),
            slack: r.slack,
            qp_status: status_str(r.status).to_owned(),
        }
    }
}

/// Sent once on connect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    pub scenario: String,
    pub control_rate_hz: f64,
    /// Per-axis bound applied to every `apply_wrench` payload.
    pub envelope: [f64; 6],
    pub limits: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub client_id: String,
    pub sequence_number: u64,
    /// Loop iteration at which the command took effect.
    pub tick: u64,
    /// The wrench actually applied, after clamping.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub applied: Option<[f64; 6]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub reason: String,
    pub client_id: Option<String>,
    pub sequence_number: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Hello(Hello),
    State(StateMessage),
    Ack(Ack),
    Rejected(Rejection),
}

impl ServerMessage {
    pub fn to_wire(&self) -> String {
        let mut v = serde_json::to_value(self).expect("plain data");
        v.as_object_mut()
            .expect("tagged struct")
            .insert("v".into(), SCHEMA_VERSION.into());
        v.to_string()
    }

    pub fn from_wire(text: &str) -> Result<Self, serde_json::Error> {
        let mut v: Value = serde_json::from_str(text)?;
        if let Some(obj) = v.as_object_mut() {
            obj.remove("v");
        }
        serde_json::from_value(v)
    }
}
