//! Real-time loop and WebSocket front end.
//!
//! The loop runs on its own thread and owns the [`Session`]. Connections
//! talk to it through one ordered queue. State goes out on a broadcast
//! channel whose slow receivers lose their oldest messages, so no client
//! can hold up a tick.

use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicU8, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use tokio::sync::{broadcast, mpsc as tmpsc, oneshot};
use wrench_cbf::sim::ScenarioConfig;

use crate::protocol::{
    parse_client_message, CommandMessage, Rejection, ServerMessage, StateMessage,
};
use crate::session::{Session, SessionError};

/// State messages buffered per client before the oldest are dropped.
pub const BROADCAST_CAPACITY: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// One tick per control period of wall-clock time.
    RealTime,
    /// As fast as the loop runs.
    Turbo,
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

enum Request {
    Command {
        message: CommandMessage,
        reply: Option<tmpsc::UnboundedSender<ServerMessage>>,
    },
    Record {
        dir: PathBuf,
        reply: mpsc::Sender<io::Result<()>>,
    },
}

const RUNNING: u8 = 0;
const PAUSED: u8 = 1;
const FINISHED: u8 = 2;

#[derive(Default)]
struct Health {
    iteration: AtomicU64,
    sim_tick: AtomicU64,
    status: AtomicU8,
}

impl Health {
    fn json(&self) -> serde_json::Value {
        let status = match self.status.load(Ordering::Relaxed) {
            RUNNING => "running",
            PAUSED => "paused",
            _ => "finished",
        };
        serde_json::json!({
            "status": status,
            "tick": self.sim_tick.load(Ordering::Relaxed),
            "iteration": self.iteration.load(Ordering::Relaxed),
        })
    }
}

/// Handle on the running control loop.
pub struct ControlLoop {
    requests: mpsc::Sender<Request>,
    states: broadcast::Sender<Arc<str>>,
    health: Arc<Health>,
    hello: Arc<str>,
    stop: Arc<AtomicBool>,
    thread: thread::JoinHandle<Session>,
}

impl ControlLoop {
    pub fn spawn(session: Session, pacing: Pacing) -> Self {
        let (requests, inbox) = mpsc::channel();
        let (states, _) = broadcast::channel(BROADCAST_CAPACITY);
        let health = Arc::new(Health::default());
        let hello: Arc<str> = ServerMessage::Hello(session.hello()).to_wire().into();
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let (states, health, stop) = (states.clone(), health.clone(), stop.clone());
            thread::Builder::new()
                .name("control-loop".into())
                .spawn(move || run_loop(session, pacing, inbox, states, health, stop))
                .expect("spawn control loop")
        };
        Self {
            requests,
            states,
            health,
            hello,
            stop,
            thread,
        }
    }

    /// Queues a command as if it came from a connection without a reply path.
    pub fn send(&self, message: CommandMessage) {
        let _ = self.requests.send(Request::Command {
            message,
            reply: None,
        });
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.states.subscribe()
    }

    /// Writes the session so far. Errors are also logged; the loop keeps going.
    pub fn record(&self, dir: &Path) -> io::Result<()> {
        let (reply, answer) = mpsc::channel();
        self.requests
            .send(Request::Record {
                dir: dir.to_owned(),
                reply,
            })
            .map_err(|_| io::Error::other("control loop stopped"))?;
        answer
            .recv()
            .map_err(|_| io::Error::other("control loop stopped"))?
    }

    /// Stops the loop after its current iteration and hands back the session.
    pub fn shutdown(self) -> Session {
        self.stop.store(true, Ordering::Relaxed);
        self.thread.join().expect("control loop panicked")
    }
}

fn run_loop(
    mut session: Session,
    pacing: Pacing,
    inbox: mpsc::Receiver<Request>,
    states: broadcast::Sender<Arc<str>>,
    health: Arc<Health>,
    stop: Arc<AtomicBool>,
) -> Session {
    let period = Duration::from_secs_f64(session.config().control_period());
    let start = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        while let Ok(request) = inbox.try_recv() {
            match request {
                Request::Command { message, reply } => {
                    let answer = match session.apply(&message) {
                        Ok(ack) => ServerMessage::Ack(ack),
                        Err(rejection) => ServerMessage::Rejected(rejection),
                    };
                    if let Some(reply) = reply {
                        let _ = reply.send(answer);
                    }
                }
                Request::Record { dir, reply } => {
                    let result = session.record(&dir);
                    if let Err(e) = &result {
                        log::warn!("recording to {} failed: {e}", dir.display());
                    }
                    let _ = reply.send(result);
                }
            }
        }
        let stepped = match session.tick() {
            Some(r) => {
                let _ = states.send(ServerMessage::State(StateMessage::from(r)).to_wire().into());
                true
            }
            None => false,
        };
        health
            .iteration
            .store(session.iteration(), Ordering::Relaxed);
        health
            .sim_tick
            .store(session.simulator().tick(), Ordering::Relaxed);
        let status = if session.finished() {
            FINISHED
        } else if session.paused() {
            PAUSED
        } else {
            RUNNING
        };
        health.status.store(status, Ordering::Relaxed);
        match pacing {
            Pacing::RealTime => {
                let due = start + period * session.iteration() as u32;
                let now = Instant::now();
                if due > now {
                    thread::sleep(due - now);
                }
            }
            Pacing::Turbo if !stepped => thread::sleep(Duration::from_millis(1)),
            Pacing::Turbo => {}
        }
    }
    session
}

#[derive(Clone)]
struct AppState {
    requests: mpsc::Sender<Request>,
    states: broadcast::Sender<Arc<str>>,
    health: Arc<Health>,
    hello: Arc<str>,
}

pub fn router(control: &ControlLoop) -> Router {
    let state = AppState {
        requests: control.requests.clone(),
        states: control.states.clone(),
        health: control.health.clone(),
        hello: control.hello.clone(),
    };
    Router::new()
        .route("/health", get(health))
        .route("/ws", get(upgrade))
        .with_state(state)
}

async fn health(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.health.json())
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let mut states = state.states.subscribe();
    let (reply, mut replies) = tmpsc::unbounded_channel::<ServerMessage>();
    if sink
        .send(Message::Text(state.hello.to_string().into()))
        .await
        .is_err()
    {
        return;
    }
    let writer = tokio::spawn(async move {
        loop {
            let text: Arc<str> = tokio::select! {
                r = states.recv() => match r {
                    Ok(text) => text,
                    Err(broadcast::error::RecvError::Lagged(_)) => continue,
                    Err(broadcast::error::RecvError::Closed) => break,
                },
                Some(m) = replies.recv() => m.to_wire().into(),
            };
            if sink
                .send(Message::Text(text.as_ref().into()))
                .await
                .is_err()
            {
                break;
            }
        }
    });
    while let Some(Ok(frame)) = stream.next().await {
        let text = match frame {
            Message::Text(t) => t,
            Message::Binary(_) => {
                let _ = reply.send(ServerMessage::Rejected(Rejection {
                    reason: "binary frames are not supported".into(),
                    client_id: None,
                    sequence_number: None,
                }));
                continue;
            }
            Message::Close(_) => break,
            _ => continue,
        };
        match parse_client_message(&text) {
            Ok(message) => {
                let request = Request::Command {
                    message,
                    reply: Some(reply.clone()),
                };
                if state.requests.send(request).is_err() {
                    break;
                }
            }
            Err(rejection) => {
                let _ = reply.send(ServerMessage::Rejected(rejection));
            }
        }
    }
    writer.abort();
}

/// A server bound and running in the current tokio runtime.
pub struct Server {
    pub addr: SocketAddr,
    control: ControlLoop,
    shutdown: oneshot::Sender<()>,
    task: tokio::task::JoinHandle<io::Result<()>>,
}

impl Server {
    pub async fn start(
        config: ScenarioConfig,
        addr: SocketAddr,
        pacing: Pacing,
    ) -> Result<Self, ServeError> {
        let session = Session::new(config)?;
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| ServeError::Bind { addr, source })?;
        let addr = listener.local_addr()?;
        let control = ControlLoop::spawn(session, pacing);
        let app = router(&control);
        let (shutdown, signal) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = signal.await;
                })
                .await
        });
        Ok(Self {
            addr,
            control,
            shutdown,
            task,
        })
    }

    pub fn control(&self) -> &ControlLoop {
        &self.control
    }

    /// Stops accepting connections, then stops the loop.
    pub async fn stop(self) -> Result<Session, ServeError> {
        let _ = self.shutdown.send(());
        // open sockets keep graceful shutdown waiting; give them a moment
        match tokio::time::timeout(Duration::from_secs(2), self.task).await {
            Ok(joined) => joined.map_err(io::Error::other)??,
            Err(_) => log::warn!("connections still open at shutdown"),
        }
        let control = self.control;
        Ok(tokio::task::spawn_blocking(move || control.shutdown())
            .await
            .map_err(io::Error::other)?)
    }
}

/// Serves until ctrl-c, then writes the session to `record` if given.
pub async fn serve(
    config: ScenarioConfig,
    addr: SocketAddr,
    pacing: Pacing,
    record: Option<&Path>,
) -> Result<(), ServeError> {
    let server = Server::start(config, addr, pacing).await?;
    log::info!("listening on {}", server.addr);
    tokio::signal::ctrl_c().await?;
    let session = server.stop().await?;
    if let Some(dir) = record {
        session.record(dir)?;
        log::info!("session written to {}", dir.display());
    }
    Ok(())
}
