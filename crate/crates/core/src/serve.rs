//! Live session: the batch stepping engine driven frame by frame, with
//! experimenter commands applied at step boundaries, streamed over a
//! WebSocket as newline-delimited JSON.
//!
//! [`Session`] holds all the logic and is synchronous, so tests can script
//! it directly. [`serve`] wraps it in a wall-clock-throttled loop.

use crate::error::{Error, Result};
use crate::model::{Assembly, Vec2};
use crate::phase::{
    decode_bit, detect_lock_at, phase_difference, zero_cross_phase, BitReading, HarmonicRatio, LockReport,
    LockTolerances, DEFAULT_GUARD, MIN_WINDOW,
};
use crate::sim::{Event, EventKind, Sample, Simulator};
use futures_util::{SinkExt, StreamExt};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, oneshot, Mutex};
use tokio_tungstenite::tungstenite::Message;

pub const DEFAULT_STREAM_RATE: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", content = "params", rename_all = "snake_case")]
pub enum Action {
    Start,
    Stop,
    /// Timed when `duration` is given, otherwise held until `release`.
    Hold {
        #[serde(default)]
        duration: Option<f64>,
    },
    Release,
    Mirror,
    Delay {
        fraction: f64,
    },
    Impulse {
        d_theta_dot: f64,
    },
    SetSpeed {
        speed: f64,
    },
}

/// A command as sent by a client, e.g.
/// `{"type":"command","seq":1,"target":"green","action":"hold","params":{"duration":0.5}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandMessage {
    #[serde(default)]
    pub seq: Option<u64>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetronomeFrame {
    pub id: String,
    pub theta: f64,
    pub tip_xy: Vec2,
    pub running: bool,
    pub held: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateMessage {
    pub t: f64,
    pub metronomes: Vec<MetronomeFrame>,
    pub platform_p: Vec2,
    pub platform_v: Vec2,
    pub lock: Option<LockReport>,
    pub bit: Option<BitReading>,
    pub speed: f64,
}

/// Everything the server sends, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State(StateMessage),
    Ack {
        seq: Option<u64>,
        applied_at: f64,
    },
    Error {
        seq: Option<u64>,
        reason: String,
    },
    Report {
        client_id: u64,
        authority: bool,
        ids: Vec<String>,
        stream_rate: f64,
    },
}

/// Everything a client may send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command(CommandMessage),
    /// Hand command authority to another connected client.
    Transfer {
        to: u64,
    },
}

/// Rolling phase analysis of the first two metronomes.
#[derive(Debug, Clone)]
struct LiveAnalysis {
    rate: f64,
    capacity: usize,
    times: VecDeque<f64>,
    a: VecDeque<f64>,
    b: VecDeque<f64>,
    psi0: Option<f64>,
    tol: LockTolerances,
}

impl LiveAnalysis {
    fn new(rate: f64, tol: LockTolerances) -> Self {
        let capacity = ((tol.window + 2.0) * rate).ceil() as usize;
        Self {
            rate,
            capacity,
            times: VecDeque::with_capacity(capacity),
            a: VecDeque::with_capacity(capacity),
            b: VecDeque::with_capacity(capacity),
            psi0: None,
            tol,
        }
    }

    fn push(&mut self, s: &Sample) {
        if s.state.theta.len() < 2 {
            return;
        }
        if self.times.len() == self.capacity {
            self.times.pop_front();
            self.a.pop_front();
            self.b.pop_front();
        }
        self.times.push_back(s.t);
        self.a.push_back(s.state.theta[0]);
        self.b.push_back(s.state.theta[1]);
    }

    fn evaluate(&mut self) -> (Option<LockReport>, Option<BitReading>) {
        let t0 = match self.times.front() {
            Some(&t) => t,
            None => return (None, None),
        };
        let t_end = *self.times.back().unwrap();
        let a: Vec<f64> = self.a.iter().copied().collect();
        let b: Vec<f64> = self.b.iter().copied().collect();
        let report = (|| {
            let pa = zero_cross_phase(&a, t0, self.rate, "a").ok()?;
            let pb = zero_cross_phase(&b, t0, self.rate, "b").ok()?;
            let diff = phase_difference(&pa, &pb, HarmonicRatio::ONE_TO_ONE).ok()?;
            let first = *diff.times.first()?;
            let window = self.tol.window.min(t_end - first);
            if window < MIN_WINDOW {
                return None;
            }
            detect_lock_at(&diff, t_end, LockTolerances { window, ..self.tol }).ok()
        })();
        let bit = report.and_then(|r| {
            if r.locked && self.psi0.is_none() {
                self.psi0 = Some(r.mean_offset);
            }
            decode_bit(&r, self.psi0?, DEFAULT_GUARD).ok()
        });
        (report, bit)
    }
}

/// One live simulation. Frames come out at the stream rate; commands are
/// applied at the current step boundary and logged as events, so the log
/// replayed through `integrate` reproduces the frames.
pub struct Session {
    sim: Simulator,
    speed: f64,
    last: Option<StateMessage>,
    pending: VecDeque<Sample>,
    analysis: LiveAnalysis,
    log: Vec<Event>,
}

impl Session {
    pub fn new(assembly: Assembly, initial: crate::model::StateVector, dt: f64, stream_rate: f64) -> Result<Self> {
        let sim = Simulator::new(assembly, initial, 0.0, dt, stream_rate)?;
        Ok(Self {
            sim,
            speed: 1.0,
            last: None,
            pending: VecDeque::new(),
            analysis: LiveAnalysis::new(stream_rate, LockTolerances::default()),
            log: Vec::new(),
        })
    }

    pub fn assembly(&self) -> &Assembly {
        self.sim.assembly()
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn events(&self) -> &[Event] {
        &self.log
    }

    pub fn stream_rate(&self) -> f64 {
        self.analysis.rate
    }

    /// Applies a command now and returns the time it took effect.
    pub fn command(&mut self, cmd: &CommandMessage) -> Result<f64> {
        let target = || {
            cmd.target
                .as_deref()
                .ok_or_else(|| Error::InvalidEvent("command needs a target".into()))
        };
        let kind = match cmd.action {
            Action::SetSpeed { speed } => {
                if !(speed.is_finite() && speed >= 0.0) {
                    return Err(Error::param("speed", format!("must be >= 0, got {speed}")));
                }
                self.speed = speed;
                return Ok(self.sim.time());
            }
            Action::Start => EventKind::Start,
            Action::Stop => EventKind::Stop,
            Action::Hold {
                duration: Some(duration),
            } => EventKind::Hold { duration },
            Action::Hold { duration: None } => EventKind::Grab,
            Action::Release => EventKind::Release,
            Action::Mirror => EventKind::Mirror,
            Action::Delay { fraction } => EventKind::Delay { fraction },
            Action::Impulse { d_theta_dot } => EventKind::Impulse { d_theta_dot },
        };
        let target = target()?.to_string();
        let t = self.sim.apply(kind, &target)?;
        self.log.push(Event::new(t, target, kind));
        Ok(t)
    }

    fn frame(&mut self, s: &Sample) -> StateMessage {
        self.analysis.push(s);
        let (lock, bit) = self.analysis.evaluate();
        let asm = self.sim.assembly();
        StateMessage {
            t: s.t,
            metronomes: asm
                .metronomes()
                .iter()
                .enumerate()
                .map(|(i, m)| MetronomeFrame {
                    id: m.id.clone(),
                    theta: s.state.theta[i],
                    tip_xy: s.tips[i],
                    running: s.state.running[i],
                    held: s.state.held[i],
                })
                .collect(),
            platform_p: s.state.platform_pos,
            platform_v: s.state.platform_vel,
            lock,
            bit,
            speed: self.speed,
        }
    }

    /// The next frame in simulated time, regardless of speed.
    pub fn step_frame(&mut self) -> Result<StateMessage> {
        if let Some(s) = self.sim.initial_sample() {
            self.pending.push_back(s);
        }
        while self.pending.is_empty() {
            let out = self.sim.advance(f64::INFINITY)?;
            self.pending.extend(out);
        }
        let s = self.pending.pop_front().unwrap();
        let msg = self.frame(&s);
        self.last = Some(msg.clone());
        Ok(msg)
    }

    /// One wall-clock tick: a new frame, or the last one again when paused.
    pub fn tick(&mut self) -> Result<StateMessage> {
        match (&self.last, self.speed == 0.0) {
            (Some(last), true) => {
                let mut m = last.clone();
                m.speed = 0.0;
                Ok(m)
            }
            _ => self.step_frame(),
        }
    }
}

struct Request {
    client: u64,
    msg: ClientMessage,
    reply: oneshot::Sender<ServerMessage>,
}

struct Clients {
    next_id: u64,
    connected: Vec<u64>,
    authority: Option<u64>,
}

/// Runs a session behind a WebSocket endpoint until the process ends.
/// `ready` receives the bound address (useful with port 0).
pub async fn serve(session: Session, addr: SocketAddr, ready: Option<oneshot::Sender<SocketAddr>>) -> Result<()> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    if let Some(r) = ready {
        let _ = r.send(local);
    }
    let ids = session.assembly().ids();
    let rate = session.stream_rate();
    let (frames_tx, _) = broadcast::channel::<String>(256);
    let (req_tx, mut req_rx) = mpsc::channel::<Request>(64);
    let clients = Arc::new(Mutex::new(Clients {
        next_id: 1,
        connected: Vec::new(),
        authority: None,
    }));

    // Simulation loop: serialized command queue, fixed tick period scaled by
    // the speed multiplier.
    let frames = frames_tx.clone();
    let auth = clients.clone();
    tokio::spawn(async move {
        let mut session = session;
        let mut interval = tokio::time::interval(Duration::from_secs_f64(1.0 / rate));
        let mut credit = 0.0;
        loop {
            tokio::select! {
                _ = interval.tick() => {
                    credit += session.speed();
                    let mut frame = None;
                    if session.speed() == 0.0 {
                        frame = session.tick().ok();
                    }
                    while credit >= 1.0 {
                        credit -= 1.0;
                        match session.step_frame() {
                            Ok(f) => frame = Some(f),
                            Err(e) => {
                                let msg = ServerMessage::Error { seq: None, reason: e.to_string() };
                                let _ = frames.send(serde_json::to_string(&msg).unwrap_or_default());
                                return;
                            }
                        }
                    }
                    if let Some(f) = frame {
                        let _ = frames.send(serde_json::to_string(&ServerMessage::State(f)).unwrap_or_default());
                    }
                }
                Some(req) = req_rx.recv() => {
                    let reply = handle_request(&mut session, &auth, req.client, req.msg).await;
                    let _ = req.reply.send(reply);
                }
            }
        }
    });

    loop {
        let (stream, _) = listener.accept().await?;
        let ws = match tokio_tungstenite::accept_async(stream).await {
            Ok(ws) => ws,
            Err(_) => continue,
        };
        let mut frames_rx = frames_tx.subscribe();
        let req_tx = req_tx.clone();
        let clients = clients.clone();
        let ids = ids.clone();
        tokio::spawn(async move {
            let id = {
                let mut c = clients.lock().await;
                let id = c.next_id;
                c.next_id += 1;
                c.connected.push(id);
                if c.authority.is_none() {
                    c.authority = Some(id);
                }
                id
            };
            let (mut sink, mut source) = ws.split();
            let hello = ServerMessage::Report {
                client_id: id,
                authority: clients.lock().await.authority == Some(id),
                ids,
                stream_rate: rate,
            };
            let _ = sink.send(Message::text(line(&hello))).await;
            loop {
                tokio::select! {
                    f = frames_rx.recv() => match f {
                        Ok(text) => {
                            if sink.send(Message::text(text + "\n")).await.is_err() {
                                break;
                            }
                        }
                        Err(broadcast::error::RecvError::Lagged(_)) => continue,
                        Err(_) => break,
                    },
                    m = source.next() => match m {
                        Some(Ok(Message::Text(text))) => {
                            for l in text.lines().filter(|l| !l.trim().is_empty()) {
                                let reply = match serde_json::from_str::<ClientMessage>(l) {
                                    Ok(msg) => {
                                        let (tx, rx) = oneshot::channel();
                                        if req_tx.send(Request { client: id, msg, reply: tx }).await.is_err() {
                                            break;
                                        }
                                        rx.await.unwrap_or(ServerMessage::Error { seq: None, reason: "session ended".into() })
                                    }
                                    Err(e) => ServerMessage::Error { seq: None, reason: format!("malformed message: {e}") },
                                };
                                if sink.send(Message::text(line(&reply))).await.is_err() {
                                    break;
                                }
                            }
                        }
                        Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                        Some(Ok(_)) => {}
                    },
                }
            }
            let mut c = clients.lock().await;
            c.connected.retain(|&x| x != id);
            if c.authority == Some(id) {
                c.authority = c.connected.first().copied();
            }
        });
    }
}

fn line(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).unwrap_or_default() + "\n"
}

async fn handle_request(
    session: &mut Session,
    clients: &Mutex<Clients>,
    client: u64,
    msg: ClientMessage,
) -> ServerMessage {
    let mut c = clients.lock().await;
    if c.authority != Some(client) {
        let seq = match &msg {
            ClientMessage::Command(cmd) => cmd.seq,
            ClientMessage::Transfer { .. } => None,
        };
        return ServerMessage::Error {
            seq,
            reason: "this client does not hold command authority".into(),
        };
    }
    match msg {
        ClientMessage::Transfer { to } => {
            if c.connected.contains(&to) {
                c.authority = Some(to);
                ServerMessage::Ack {
                    seq: None,
                    applied_at: session.time(),
                }
            } else {
                ServerMessage::Error {
                    seq: None,
                    reason: format!("no connected client {to}"),
                }
            }
        }
        ClientMessage::Command(cmd) => match session.command(&cmd) {
            Ok(t) => ServerMessage::Ack {
                seq: cmd.seq,
                applied_at: t,
            },
            Err(e) => ServerMessage::Error {
                seq: cmd.seq,
                reason: e.to_string(),
            },
        },
    }
}
