use std::net::SocketAddr;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};
use wrench_cbf::sim::scenarios;
use wrench_cbf::sim::trace::{parse_trace_csv, trace_csv};
use wrench_cbf_teleop::protocol::{Hello, StateMessage};
use wrench_cbf_teleop::{replay, CommandMessage, Pacing, Server, ServerMessage, SessionLog};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

async fn start(pacing: Pacing) -> Server {
    let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
    Server::start(scenarios::interactive(), addr, pacing)
        .await
        .unwrap()
}

struct Client {
    socket: Socket,
    hello: Hello,
}

impl Client {
    async fn connect(server: &Server) -> Self {
        let (mut socket, _) = connect_async(format!("ws://{}/ws", server.addr))
            .await
            .unwrap();
        let hello = match next(&mut socket).await {
            ServerMessage::Hello(h) => h,
            other => panic!("expected hello, got {other:?}"),
        };
        Self { socket, hello }
    }

    async fn send_text(&mut self, text: String) {
        self.socket.send(Message::Text(text.into())).await.unwrap();
    }

    async fn send(&mut self, m: &CommandMessage) {
        self.send_text(m.to_wire()).await;
    }

    /// Next message that is not a state broadcast. Under turbo pacing the
    /// broadcasts queued ahead of it can be far behind the loop, so waits
    /// are anchored on the tick in an ack rather than on the last state.
    async fn reply(&mut self) -> ServerMessage {
        loop {
            match next(&mut self.socket).await {
                ServerMessage::State(_) => continue,
                other => return other,
            }
        }
    }

    async fn state(&mut self) -> StateMessage {
        loop {
            if let ServerMessage::State(s) = next(&mut self.socket).await {
                return s;
            }
        }
    }

    async fn wait_until(&mut self, t: f64) -> StateMessage {
        loop {
            let s = self.state().await;
            if s.t >= t {
                return s;
            }
        }
    }
}

async fn next(socket: &mut Socket) -> ServerMessage {
    let frame = tokio::time::timeout(Duration::from_secs(10), socket.next())
        .await
        .expect("server went quiet")
        .expect("socket closed")
        .unwrap();
    ServerMessage::from_wire(frame.to_text().unwrap()).unwrap()
}

fn acked(m: ServerMessage) -> wrench_cbf_teleop::protocol::Ack {
    match m {
        ServerMessage::Ack(a) => a,
        other => panic!("expected ack, got {other:?}"),
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn push_past_the_limit_is_yielded_to_and_replays_exactly() {
    let server = start(Pacing::Turbo).await;
    let mut client = Client::connect(&server).await;
    assert_eq!(client.hello.limits[0], 10.0);
    client
        .send(&CommandMessage::apply_wrench(
            [15.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            "drag",
            1,
        ))
        .await;
    let ack = acked(client.reply().await);
    assert_eq!(ack.applied.unwrap()[0], 15.0);
    let t0 = ack.tick as f64 / client.hello.control_rate_hz;
    client.wait_until(t0 + 5.0).await;
    client
        .send(&CommandMessage::apply_wrench([0.0; 6], "drag", 2))
        .await;
    acked(client.reply().await);
    client.wait_until(t0 + 6.0).await;

    let dir = tempfile::tempdir().unwrap();
    server.control().record(dir.path()).unwrap();
    drop(client);
    let live = server.stop().await.unwrap();

    let log = SessionLog::from_json_str(
        &std::fs::read_to_string(dir.path().join("interactive.commands.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(log.commands.len(), 2);
    let config = &log.config;
    let text = std::fs::read_to_string(dir.path().join("interactive.trace.csv")).unwrap();
    let trace = parse_trace_csv(&text, &config.desired_pose, config.limits.w_max()).unwrap();
    let max_fx = trace
        .iter()
        .map(|r| r.wrench.force.x)
        .fold(f64::MIN, f64::max);
    assert!(max_fx > 9.0 && max_fx <= 10.0 * 1.05, "{max_fx}");
    // yields while pushed; after release the target pulls it back home
    let furthest = trace
        .iter()
        .map(|r| r.pose.position.x)
        .fold(f64::MIN, f64::max);
    assert!(
        furthest - config.initial_pose.position.x > 0.5,
        "{furthest}"
    );

    // the loop kept running after the recording; the replay matches up to it
    let again = replay(&log).unwrap();
    assert_eq!(trace_csv(again.trace()), text);
    assert_eq!(again.trace(), &live.trace()[..again.trace().len()]);
}

#[tokio::test(flavor = "multi_thread")]
async fn empty_session_records_an_empty_log_and_a_valid_trace() {
    let server = start(Pacing::Turbo).await;
    let mut client = Client::connect(&server).await;
    let s = client.wait_until(1.0).await;
    assert!(s.per_axis_margin.iter().all(|h| *h < 0.0));
    assert_eq!(s.compensated_wrench, [0.0; 6]);
    let dir = tempfile::tempdir().unwrap();
    server.control().record(dir.path()).unwrap();
    server.stop().await.unwrap();
    let log = SessionLog::from_json_str(
        &std::fs::read_to_string(dir.path().join("interactive.commands.json")).unwrap(),
    )
    .unwrap();
    assert!(log.commands.is_empty());
    let text = std::fs::read_to_string(dir.path().join("interactive.trace.csv")).unwrap();
    let c = scenarios::interactive();
    let trace = parse_trace_csv(&text, &c.desired_pose, c.limits.w_max()).unwrap();
    assert!(!trace.is_empty());
    assert!(trace.iter().all(|r| r.pose == c.initial_pose));
    assert_eq!(trace_csv(replay(&log).unwrap().trace()), text);
}

#[tokio::test(flavor = "multi_thread")]
async fn two_clients_wrenches_add() {
    let server = start(Pacing::Turbo).await;
    let mut a = Client::connect(&server).await;
    let mut b = Client::connect(&server).await;
    a.send(&CommandMessage::apply_wrench(
        [4.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "a",
        1,
    ))
    .await;
    acked(a.reply().await);
    b.send(&CommandMessage::apply_wrench(
        [3.0, 0.0, 1.0, 0.0, 0.0, 0.0],
        "b",
        1,
    ))
    .await;
    let ack = acked(b.reply().await);
    assert_eq!(ack.applied, Some([7.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
    // both held below the limit: the sensed wrench settles on the sum
    let s = a
        .wait_until(ack.tick as f64 / a.hello.control_rate_hz + 3.0)
        .await;
    assert!(
        (s.compensated_wrench[0] - 7.0).abs() < 1e-6,
        "{:?}",
        s.compensated_wrench
    );
    assert!((s.compensated_wrench[2] - 1.0).abs() < 1e-6);
    server.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn malformed_and_stale_messages_are_rejected_without_dropping_the_connection() {
    let server = start(Pacing::Turbo).await;
    let mut c = Client::connect(&server).await;
    c.send_text("{not json".into()).await;
    assert!(matches!(c.reply().await, ServerMessage::Rejected(r) if r.reason.contains("not JSON")));
    c.send(&CommandMessage::apply_wrench(
        [1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "c",
        7,
    ))
    .await;
    acked(c.reply().await);
    c.send(&CommandMessage::apply_wrench(
        [2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "c",
        7,
    ))
    .await;
    match c.reply().await {
        ServerMessage::Rejected(r) => assert_eq!(r.sequence_number, Some(7)),
        other => panic!("{other:?}"),
    }
    // a reconnect under the same id continues the numbering
    drop(c);
    let mut c = Client::connect(&server).await;
    c.send(&CommandMessage::apply_wrench(
        [2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "c",
        3,
    ))
    .await;
    assert!(matches!(c.reply().await, ServerMessage::Rejected(_)));
    c.send(&CommandMessage::apply_wrench(
        [2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        "c",
        8,
    ))
    .await;
    acked(c.reply().await);
    server.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn health_reports_status_and_ticks() {
    let server = start(Pacing::RealTime).await;
    tokio::time::sleep(Duration::from_millis(200)).await;
    let mut stream = TcpStream::connect(server.addr).await.unwrap();
    use tokio::io::{AsyncReadExt, AsyncWriteExt};
    stream
        .write_all(b"GET /health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n")
        .await
        .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).await.unwrap();
    let body: serde_json::Value =
        serde_json::from_str(response.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["status"], "running");
    // real-time pacing: about 6 ticks in 200 ms, far from turbo speed
    let tick = body["tick"].as_u64().unwrap();
    assert!((2..=30).contains(&tick), "{tick}");
    server.stop().await.unwrap();
}

#[tokio::test(flavor = "multi_thread")]
async fn a_taken_port_fails_at_startup() {
    let server = start(Pacing::Turbo).await;
    let err = Server::start(scenarios::interactive(), server.addr, Pacing::Turbo)
        .await
        .err()
        .unwrap();
    assert!(err.to_string().contains("cannot bind"), "{err}");
    server.stop().await.unwrap();
}
