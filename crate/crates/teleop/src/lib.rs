//! Network bridge for driving the simulator by hand.
//!
//! Clients connect to `/ws`, receive a `hello` with the wrench envelope and
//! then one `state` message per control tick. They send `command` messages
//! (`apply_wrench`, `set_target`, `set_limits`, `pause`, `reset`), each
//! answered with `ack` or `rejected`. `/health` reports status and tick
//! count.

pub mod protocol;
pub mod server;
pub mod session;

pub use protocol::{Command, CommandKind, CommandMessage, ServerMessage, StateMessage};
pub use server::{serve, ControlLoop, Pacing, ServeError, Server};
pub use session::{replay, LoggedCommand, Session, SessionError, SessionLog};
