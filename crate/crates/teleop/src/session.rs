//! The simulator as driven by remote clients. Everything here is
//! deterministic given the scenario and the command log, which is what
//! makes a recorded session replayable.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use wrench_cbf::contact::ContactModel;
use wrench_cbf::se3::Wrench;
use wrench_cbf::sim::trace::write_run;
use wrench_cbf::sim::{summarize, ConfigError, RunSummary, ScenarioConfig, Simulator, TraceRecord};

use crate::protocol::{Ack, Command, CommandMessage, Hello, Rejection, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario {0:?} has no interactive contact")]
    NotInteractive(String),
    #[error("replay rejected the command logged at tick {tick}: {reason}")]
    Replay { tick: u64, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedCommand {
    /// Loop iteration before which the command was applied.
    pub tick: u64,
    pub command: CommandMessage,
}

/// Everything needed to rebuild a session bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub v: u32,
    pub config: ScenarioConfig,
    pub iterations: u64,
    pub commands: Vec<LoggedCommand>,
}

impl SessionLog {
    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data")
    }
}

pub struct Session {
    config: ScenarioConfig,
    sim: Simulator,
    iteration: u64,
    paused: bool,
    /// Latest wrench per client, clamped.
    wrenches: BTreeMap<String, Wrench>,
    /// Highest sequence number applied per client. Survives resets so a
    /// reconnecting client cannot replay old commands.
    sequences: BTreeMap<String, u64>,
    commands: Vec<LoggedCommand>,
    trace: Vec<TraceRecord>,
}

impl Session {
    pub fn new(config: ScenarioConfig) -> Result<Self, SessionError> {
        let sim = Simulator::new(config.clone())?;
        if !matches!(sim.contact(), ContactModel::Interactive(_)) {
            return Err(SessionError::NotInteractive(config.name));
        }
        Ok(Self {
            config,
            sim,
            iteration: 0,
            paused: false,
            wrenches: BTreeMap::new(),
            sequences: BTreeMap::new(),
            commands: Vec::new(),
            trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn paused(&self) -> bool {
        self.paused
    }

    pub fn finished(&self) -> bool {
        self.sim.finished()
    }

    pub fn envelope(&self) -> Wrench {
        match self.sim.contact() {
            ContactModel::Interactive(grip) => grip.envelope,
            _ => unreachable!("checked in new"),
        }
    }

    fn clamp(&self, w: &Wrench) -> Wrench {
        match self.sim.contact() {
            ContactModel::Interactive(grip) => grip.clamp(w),
            _ => unreachable!("checked in new"),
        }
    }

    pub fn hello(&self) -> Hello {
        Hello {
            scenario: self.config.name.clone(),
            control_rate_hz: self.config.control_rate_hz,
            envelope: self.envelope().to_array(),
            limits: self.sim.limits().w_max().to_array(),
        }
    }

    /// Records since the start or the last reset.
    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn summary(&self) -> RunSummary {
        summarize(&self.config.name, &self.trace)
    }

    pub fn log(&self) -> SessionLog {
        SessionLog {
            v: SCHEMA_VERSION,
            config: self.config.clone(),
            iterations: self.iteration,
            commands: self.commands.clone(),
        }
    }

    /// Applies a command before the next iteration. Stale sequence numbers
    /// and bad payloads are rejected and leave no trace in the log.
    pub fn apply(&mut self, msg: &CommandMessage) -> Result<Ack, Rejection> {
        let reject = |reason: String| Rejection {
            reason,
            client_id: Some(msg.client_id.clone()),
            sequence_number: Some(msg.sequence_number),
        };
        if let Some(&last) = self.sequences.get(&msg.client_id) {
            if msg.sequence_number <= last {
                return Err(reject(format!(
                    "sequence number {} already seen (last {last})",
                    msg.sequence_number
                )));
            }
        }
        let command = msg.decode().map_err(reject)?;
        self.sequences
            .insert(msg.client_id.clone(), msg.sequence_number);
        self.commands.push(LoggedCommand {
            tick: self.iteration,
            command: msg.clone(),
        });
        let mut applied = None;
        match command {
            Command::ApplyWrench(w) => {
                let w = self.clamp(&w);
                self.wrenches.insert(msg.client_id.clone(), w);
                applied = Some(self.push_human_wrench().to_array());
            }
            Command::SetTarget(pose) => self.sim.set_target(pose),
            Command::SetLimits(limits) => self.sim.set_limits(limits),
            Command::Pause(p) => self.paused = p,
            Command::Reset => {
                self.sim = Simulator::new(self.config.clone()).expect("validated in new");
                self.wrenches.clear();
                self.trace.clear();
                self.paused = false;
            }
        }
        Ok(Ack {
            client_id: msg.client_id.clone(),
            sequence_number: msg.sequence_number,
            tick: self.iteration,
            applied,
        })
    }

    fn push_human_wrench(&mut self) -> Wrench {
        let total = self.wrenches.values().fold(Wrench::zero(), |acc, w| {
            Wrench::from_vector(&(acc.to_vector() + w.to_vector()))
        });
        self.sim.set_human_command(&total)
    }

    /// One loop iteration: a control tick unless paused or finished.
    pub fn tick(&mut self) -> Option<&TraceRecord> {
        self.iteration += 1;
        if self.paused || self.sim.finished() {
            return None;
        }
        let r = self.sim.step();
        self.trace.push(r);
        self.trace.last()
    }

    /// Writes the trace and summary in the same layout as a batch run, plus
    /// `<name>.commands.json`.
    pub fn record(&self, dir: &Path) -> io::Result<()> {
        write_run(dir, &self.trace, &self.summary(), &[], false)?;
        std::fs::write(
            dir.join(format!("{}.commands.json", self.config.name)),
            self.log().to_json_pretty() + "\n",
        )
    }
}

/// Re-runs a logged session.
pub fn replay(log: &SessionLog) -> Result<Session, SessionError> {
    let mut session = Session::new(log.config.clone())?;
    let mut pending = log.commands.iter().peekable();
    for i in 0..=log.iterations {
        while let Some(c) = pending.next_if(|c| c.tick == i) {
            session
                .apply(&c.command)
                .map_err(|r| SessionError::Replay {
                    tick: c.tick,
                    reason: r.reason,
                })?;
        }
        if i < log.iterations {
            session.tick();
        }
    }
    if let Some(c) = pending.next() {
        return Err(SessionError::Replay {
            tick: c.tick,
            reason: format!("logged after the last iteration ({})", log.iterations),
        });
    }
    Ok(session)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::CommandKind;
    use wrench_cbf::sim::scenarios;

    fn session() -> Session {
        let mut c = scenarios::interactive();
        c.duration = 10.0;
        Session::new(c).unwrap()
    }

    #[test]
    fn rejects_non_interactive_scenarios() {
        assert!(matches!(
            Session::new(scenarios::bag_test()),
            Err(SessionError::NotInteractive(_))
        ));
    }

    #[test]
    fn latest_wins_per_client_and_clients_sum() {
        let mut s = session();
        s.apply(&CommandMessage::apply_wrench(
            [3.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            "a",
            1,
        ))
        .unwrap();
        s.apply(&CommandMessage::apply_wrench(
            [4.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            "a",
            2,
        ))
        .unwrap();
        let ack = s
            .apply(&CommandMessage::apply_wrench(
                [0.0, 2.0, 0.0, 0.0, 0.0, 0.0],
                "b",
                1,
            ))
            .unwrap();
        assert_eq!(ack.applied, Some([4.0, 2.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(
            s.simulator().human_command().to_array(),
            [4.0, 2.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn wrenches_are_clamped_each_and_in_sum() {
        let mut s = session();
        let env = s.envelope().to_array();
        let ack = s
            .apply(&CommandMessage::apply_wrench(
                [1e3, 0.0, 0.0, 0.0, 0.0, -1e3],
                "a",
                1,
            ))
            .unwrap();
        assert_eq!(ack.applied.unwrap()[0], env[0]);
        assert_eq!(ack.applied.unwrap()[5], -env[5]);
        let ack = s
            .apply(&CommandMessage::apply_wrench(
                [env[0], 0.0, 0.0, 0.0, 0.0, 0.0],
                "b",
                1,
            ))
            .unwrap();
        assert_eq!(ack.applied.unwrap()[0], env[0]);
    }

    #[test]
    fn stale_sequence_numbers_are_dropped() {
        let mut s = session();
        s.apply(&CommandMessage::apply_wrench(
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            "a",
            5,
        ))
        .unwrap();
        let r = s
            .apply(&CommandMessage::apply_wrench(
                [9.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                "a",
                5,
            ))
            .unwrap_err();
        assert!(r.reason.contains("already seen"));
        assert!(s
            .apply(&CommandMessage::apply_wrench(
                [9.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                "a",
                4
            ))
            .is_err());
        assert_eq!(s.simulator().human_command().force.x, 1.0);
        assert_eq!(s.log().commands.len(), 1);
        // other clients number independently
        s.apply(&CommandMessage::apply_wrench([0.0; 6], "b", 1))
            .unwrap();
    }

    #[test]
    fn bad_payload_does_not_consume_the_sequence_number() {
        let mut s = session();
        let bad = CommandMessage::new(CommandKind::SetLimits, serde_json::json!([1, 1]), "a", 1);
        assert!(s.apply(&bad).is_err());
        s.apply(&CommandMessage::apply_wrench([0.0; 6], "a", 1))
            .unwrap();
    }

    #[test]
    fn pause_stops_the_clock() {
        let mut s = session();
        s.tick();
        s.apply(&CommandMessage::new(
            CommandKind::Pause,
            serde_json::Value::Null,
            "a",
            1,
        ))
        .unwrap();
        assert!(s.tick().is_none());
        assert_eq!(s.simulator().tick(), 1);
        s.apply(&CommandMessage::new(
            CommandKind::Pause,
            false.into(),
            "a",
            2,
        ))
        .unwrap();
        assert!(s.tick().is_some());
        assert_eq!(s.iteration(), 3);
    }

    #[test]
    fn reset_restarts_the_trace_and_releases_the_hand() {
        let mut s = session();
        s.apply(&CommandMessage::apply_wrench(
            [15.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            "a",
            1,
        ))
        .unwrap();
        for _ in 0..30 {
            s.tick();
        }
        s.apply(&CommandMessage::new(
            CommandKind::Reset,
            serde_json::Value::Null,
            "a",
            2,
        ))
        .unwrap();
        assert!(s.trace().is_empty());
        assert_eq!(s.simulator().human_command(), &Wrench::zero());
        assert_eq!(s.tick().unwrap().t, 0.0);
    }

    #[test]
    fn finished_sessions_stop_stepping() {
        let mut s = session();
        while !s.finished() {
            s.tick();
        }
        let n = s.trace().len();
        assert_eq!(n as u64, s.config().tick_count());
        assert!(s.tick().is_none());
        assert_eq!(s.trace().len(), n);
    }

    #[test]
    fn replay_reproduces_the_trace() {
        let mut s = session();
        let target = serde_json::json!({"position": [0.5, 0.02, 0.8], "orientation": [1, 0, 0, 0]});
        for i in 0..120u64 {
            match i {
                5 => drop(s.apply(&CommandMessage::apply_wrench(
                    [15.0, 0.0, 0.0, 0.0, 0.0, 0.2],
                    "a",
                    1,
                ))),
                20 => drop(s.apply(&CommandMessage::apply_wrench(
                    [0.0, -6.0, 0.0, 0.0, 0.0, 0.0],
                    "b",
                    1,
                ))),
                40 => drop(s.apply(&CommandMessage::new(
                    CommandKind::SetTarget,
                    target.clone(),
                    "b",
                    2,
                ))),
                60 => drop(s.apply(&CommandMessage::new(
                    CommandKind::Pause,
                    true.into(),
                    "a",
                    2,
                ))),
                70 => drop(s.apply(&CommandMessage::new(
                    CommandKind::Pause,
                    false.into(),
                    "a",
                    3,
                ))),
                90 => drop(s.apply(&CommandMessage::apply_wrench([0.0; 6], "a", 4))),
                _ => {}
            }
            s.tick();
        }
        s.apply(&CommandMessage::apply_wrench([1.0; 6], "a", 5))
            .unwrap();
        let log = SessionLog::from_json_str(&s.log().to_json_pretty()).unwrap();
        let again = replay(&log).unwrap();
        assert_eq!(again.trace(), s.trace());
        assert_eq!(
            again.simulator().human_command(),
            s.simulator().human_command()
        );
        assert_eq!(again.log(), s.log());
    }

    #[test]
    fn replay_refuses_commands_past_the_end() {
        let mut log = session().log();
        log.commands.push(LoggedCommand {
            tick: 3,
            command: CommandMessage::apply_wrench([0.0; 6], "a", 1),
        });
        assert!(matches!(
            replay(&log),
            Err(SessionError::Replay { tick: 3, .. })
        ));
    }
}
