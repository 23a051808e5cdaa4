//! Real-time simulation server. State frames go out as newline-delimited
//! JSON over TCP and, optionally, as WebSocket text messages carrying the
//! same JSON.

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender, TrySendError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};
use strider_core::env::{c_high_features, Action, AgentState, EnvConfig, ObsNormalizer, PerturbKind, QuadrupedEnv, QuadrupedModel};
use strider_core::physics::{wrap_angle, BodyId, Shape};
use strider_core::policy::{Level, McpPolicy};
use strider_core::refmotion::Command;
use strider_core::rewards::{r_heading, r_speed, RewardWeights};

/// Messages a client may send.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    Command { speed: f64, heading_delta: f64 },
    Perturb { kind: PerturbKind },
    Reset,
}

/// Parses one client frame. Unknown fields are ignored; unknown types and
/// malformed JSON are errors.
pub fn parse_message(text: &str) -> Result<ClientMessage, String> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| format!("malformed frame: {e}"))?;
    let ty = v.get("type").and_then(|t| t.as_str()).ok_or("frame has no string `type` field")?.to_string();
    if !matches!(ty.as_str(), "command" | "perturb" | "reset") {
        return Err(format!("unknown frame type {ty:?}"));
    }
    let msg: ClientMessage = serde_json::from_value(v).map_err(|e| format!("bad {ty} frame: {e}"))?;
    if let ClientMessage::Command { speed, heading_delta } = msg {
        if !speed.is_finite() || !heading_delta.is_finite() {
            return Err("command values must be finite".into());
        }
    }
    Ok(msg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkPose {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxPose {
    pub x: f64,
    pub y: f64,
    pub angle: f64,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardReadout {
    pub speed: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFrame {
    #[serde(rename = "type")]
    pub kind: String,
    pub tick: u64,
    pub t: f64,
    pub links: Vec<LinkPose>,
    pub contacts: [bool; 4],
    pub yaw: f64,
    pub com_speed: f64,
    pub active_command: [f64; 2],
    pub reward: RewardReadout,
    pub ground_friction: f64,
    pub boxes: Vec<BoxPose>,
    /// Falls since start; each one triggers an automatic reset.
    pub falls: u64,
}

pub fn error_frame(message: &str) -> String {
    serde_json::json!({ "type": "error", "message": message }).to_string()
}

/// The simulation half of the server: deterministic given the sequence of
/// messages applied between ticks.
pub struct ServeSim {
    env: QuadrupedEnv,
    policy: McpPolicy,
    normalizer: ObsNormalizer,
    start: AgentState,
    weights: RewardWeights,
    command: Command,
    target_heading: f64,
    agent: AgentState,
    rng: ChaCha8Rng,
    tick: u64,
    falls: u64,
    boxes: Vec<BodyId>,
}

impl ServeSim {
    pub fn new(
        policy: McpPolicy,
        normalizer: ObsNormalizer,
        model: QuadrupedModel,
        env_cfg: EnvConfig,
        start: AgentState,
        seed: u64,
    ) -> Result<Self> {
        let cfg = EnvConfig { max_steps: usize::MAX, ..env_cfg };
        let mut env = QuadrupedEnv::new(model, cfg)?;
        env.reset_from_reference(&start)?;
        let agent = env.observe();
        Ok(Self {
            env,
            policy,
            normalizer,
            weights: RewardWeights::default(),
            command: Command::new(0.0, 0.0),
            target_heading: agent.yaw,
            agent,
            start,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tick: 0,
            falls: 0,
            boxes: Vec::new(),
        })
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn active_command(&self) -> Command {
        self.command
    }

    fn reset(&mut self) -> Result<()> {
        self.env.reset_from_reference(&self.start)?;
        self.agent = self.env.observe();
        self.target_heading = wrap_angle(self.agent.yaw + self.command.heading_delta);
        self.boxes.clear();
        Ok(())
    }

    /// Applies a client message. Commands latch until the next one; the
    /// heading change is taken relative to the current yaw.
    pub fn apply(&mut self, msg: &ClientMessage) -> Result<()> {
        match *msg {
            ClientMessage::Command { speed, heading_delta } => {
                self.command = Command::new(speed.clamp(0.0, 4.0), heading_delta.clamp(-std::f64::consts::PI, std::f64::consts::PI));
                self.target_heading = wrap_angle(self.agent.yaw + self.command.heading_delta);
            }
            ClientMessage::Perturb { kind } => {
                if let Some(id) = self.env.perturb(kind, &mut self.rng)? {
                    self.boxes.push(id);
                }
            }
            ClientMessage::Reset => self.reset()?,
        }
        Ok(())
    }

    /// Advances one control step and returns the resulting frame.
    pub fn step(&mut self) -> Result<StateFrame> {
        let s = self.normalizer.state(&self.agent);
        let c = c_high_features(self.command.speed, wrap_angle(self.target_heading - self.agent.yaw));
        let (a, _) = self.policy.act(Level::High, &s, &c, true, &mut self.rng)?;
        self.tick += 1;
        match self.env.step(&Action::from_slice(&a)?) {
            Ok(info) if !info.terminated => self.agent = info.state,
            Ok(_) => {
                self.falls += 1;
                self.reset()?;
            }
            Err(e) => {
                log::warn!("simulation failed at tick {}: {e}; resetting", self.tick);
                self.falls += 1;
                self.reset()?;
            }
        }
        Ok(self.frame())
    }

    pub fn frame(&self) -> StateFrame {
        let a = &self.agent;
        let world = self.env.world();
        let boxes = self
            .boxes
            .iter()
            .map(|&id| world.body(id))
            .filter(|b| b.is_active())
            .map(|b| {
                let half = match b.shape {
                    Shape::Box { half_extents } => half_extents,
                    Shape::Capsule { half_length, radius } => strider_core::physics::Vec2::new(radius, half_length + radius),
                };
                BoxPose { x: b.position.x, y: b.position.y, angle: b.angle, width: 2.0 * half.x, height: 2.0 * half.y }
            })
            .collect();
        StateFrame {
            kind: "state".into(),
            tick: self.tick,
            t: self.tick as f64 / self.env.config.control_hz as f64,
            links: a.links.iter().map(|l| LinkPose { x: l.position[0], y: l.position[1], angle: l.angle() }).collect(),
            contacts: a.contacts,
            yaw: a.yaw,
            com_speed: a.speed(),
            active_command: [self.command.speed, self.command.heading_delta],
            reward: RewardReadout {
                speed: r_speed(self.command.speed, a.heading_velocity, self.weights.lambda_speed),
                heading: r_heading(self.target_heading, a.heading_velocity),
            },
            ground_friction: world.config.ground.map_or(0.0, |g| g.friction),
            boxes,
            falls: self.falls,
        }
    }
}

/// A message together with the tick before which it was applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedMessage {
    pub tick: u64,
    pub message: ClientMessage,
}

/// Re-runs `ticks` steps applying `log` at the recorded tick boundaries.
pub fn replay(sim: &mut ServeSim, log: &[LoggedMessage], ticks: u64) -> Result<Vec<StateFrame>> {
    let mut frames = Vec::with_capacity(ticks as usize);
    let mut pending = log.iter().peekable();
    for _ in 0..ticks {
        while let Some(m) = pending.next_if(|m| m.tick == sim.tick_count()) {
            sim.apply(&m.message)?;
        }
        frames.push(sim.step()?);
    }
    Ok(frames)
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub host: String,
    /// 0 picks a free port.
    pub port: u16,
    /// `None` disables the WebSocket listener; `Some(0)` picks a free port.
    pub ws_port: Option<u16>,
    pub tick_hz: u32,
    pub client_buffer: usize,
    /// Stop after this many ticks.
    pub max_ticks: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct ServeSummary {
    pub ticks: u64,
    pub clients: u64,
    pub frames_dropped: u64,
    pub log: Vec<LoggedMessage>,
}

/// Per-client bounded queues. Sending never blocks: a full queue loses the
/// frame for that client only.
#[derive(Default)]
pub struct Broadcast {
    clients: Mutex<Vec<SyncSender<Arc<str>>>>,
}

impl Broadcast {
    pub fn register(&self, buffer: usize) -> (SyncSender<Arc<str>>, Receiver<Arc<str>>) {
        let (tx, rx) = mpsc::sync_channel(buffer);
        self.clients.lock().expect("client list lock").push(tx.clone());
        (tx, rx)
    }

    /// Queues `frame` for every live client; returns how many were full.
    /// Disconnected clients are forgotten.
    pub fn send(&self, frame: &Arc<str>) -> u64 {
        let mut dropped = 0;
        self.clients.lock().expect("client list lock").retain(|tx| match tx.try_send(Arc::clone(frame)) {
            Ok(()) => true,
            Err(TrySendError::Full(_)) => {
                dropped += 1;
                true
            }
            Err(TrySendError::Disconnected(_)) => false,
        });
        dropped
    }

    pub fn len(&self) -> usize {
        self.clients.lock().expect("client list lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

type Inbox = (usize, ClientMessage);

struct Shared {
    stop: AtomicBool,
    clients: Broadcast,
    accepted: AtomicU64,
}

pub struct ServerHandle {
    pub addr: SocketAddr,
    pub ws_addr: Option<SocketAddr>,
    shared: Arc<Shared>,
    sim: Option<JoinHandle<Result<ServeSummary>>>,
    acceptors: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }

    pub fn is_running(&self) -> bool {
        self.sim.as_ref().is_some_and(|h| !h.is_finished())
    }

    /// Waits for the simulation loop to end (after [`ServerHandle::stop`] or
    /// the tick limit) and returns its summary.
    pub fn join(mut self) -> Result<ServeSummary> {
        let r = self.sim.take().expect("joined once").join().map_err(|_| anyhow::anyhow!("simulation thread panicked"))?;
        self.shared.stop.store(true, Ordering::SeqCst);
        for a in self.acceptors.drain(..) {
            let _ = a.join();
        }
        r
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
    }
}

fn register(shared: &Shared, buffer: usize) -> (SyncSender<Arc<str>>, Receiver<Arc<str>>) {
    let (tx, rx) = shared.clients.register(buffer);
    shared.accepted.fetch_add(1, Ordering::SeqCst);
    (tx, rx)
}

fn handle_line(line: &str, id: usize, inbox: &Sender<Inbox>, own: &SyncSender<Arc<str>>) {
    if line.trim().is_empty() {
        return;
    }
    match parse_message(line) {
        Ok(m) => {
            let _ = inbox.send((id, m));
        }
        Err(e) => {
            let _ = own.try_send(error_frame(&e).into());
        }
    }
}

fn serve_ndjson(stream: TcpStream, id: usize, shared: Arc<Shared>, inbox: Sender<Inbox>, buffer: usize) {
    let (tx, rx) = register(&shared, buffer);
    let Ok(mut writer) = stream.try_clone() else { return };
    let _ = stream.set_read_timeout(Some(Duration::from_millis(50)));
    let stop = Arc::clone(&shared);
    let write_thread = std::thread::spawn(move || {
        while !stop.stop.load(Ordering::SeqCst) {
            match rx.recv_timeout(Duration::from_millis(50)) {
                Ok(frame) => {
                    if writer.write_all(frame.as_bytes()).and_then(|_| writer.write_all(b"\n")).is_err() {
                        break;
                    }
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {}
                Err(mpsc::RecvTimeoutError::Disconnected) => break,
            }
        }
        let _ = writer.shutdown(std::net::Shutdown::Both);
    });
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    while !shared.stop.load(Ordering::SeqCst) && !write_thread.is_finished() {
        match reader.read_line(&mut line) {
            Ok(0) => break,
            Ok(_) => {
                handle_line(&line, id, &inbox, &tx);
                line.clear();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    drop(tx);
    let _ = write_thread.join();
}

fn serve_ws(stream: TcpStream, id: usize, shared: Arc<Shared>, inbox: Sender<Inbox>, buffer: usize) {
    use tungstenite::{Error as WsError, Message};
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let Ok(mut ws) = tungstenite::accept(stream) else { return };
    let _ = ws.get_ref().set_read_timeout(Some(Duration::from_millis(5)));
    let (tx, rx) = register(&shared, buffer);
    while !shared.stop.load(Ordering::SeqCst) {
        let mut flushed = false;
        while let Ok(frame) = rx.try_recv() {
            if ws.write(Message::text(frame.to_string())).is_err() {
                return;
            }
            flushed = true;
        }
        if flushed && ws.flush().is_err() {
            return;
        }
        match ws.read() {
            Ok(Message::Text(t)) => handle_line(t.as_str(), id, &inbox, &tx),
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => break,
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>, inbox: Sender<Inbox>, buffer: usize, ws: bool) {
    let _ = listener.set_nonblocking(true);
    let mut next_id = if ws { 1 << 32 } else { 0 };
    let mut handlers: Vec<JoinHandle<()>> = Vec::new();
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                log::info!("client {peer} connected");
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                let (s, i) = (Arc::clone(&shared), inbox.clone());
                let id = next_id;
                next_id += 1;
                handlers.push(std::thread::spawn(move || {
                    if ws {
                        serve_ws(stream, id, s, i, buffer)
                    } else {
                        serve_ndjson(stream, id, s, i, buffer)
                    }
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(Duration::from_millis(5));
            }
        }
        handlers.retain(|h| !h.is_finished());
    }
    for h in handlers {
        let _ = h.join();
    }
}

fn sim_loop(mut sim: ServeSim, shared: Arc<Shared>, inbox: Receiver<Inbox>, tick_hz: u32, max_ticks: Option<u64>) -> Result<ServeSummary> {
    let period = Duration::from_secs_f64(1.0 / tick_hz as f64);
    let mut summary = ServeSummary::default();
    let mut next = Instant::now();
    while !shared.stop.load(Ordering::SeqCst) && max_ticks.is_none_or(|m| sim.tick_count() < m) {
        while let Ok((_, msg)) = inbox.try_recv() {
            summary.log.push(LoggedMessage { tick: sim.tick_count(), message: msg.clone() });
            sim.apply(&msg)?;
        }
        let frame = sim.step()?;
        let text: Arc<str> = serde_json::to_string(&frame)?.into();
        summary.frames_dropped += shared.clients.send(&text);
        next += period;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        } else if now - next > 5 * period {
            // Far behind: resynchronise rather than bursting.
            next = now;
        }
    }
    summary.ticks = sim.tick_count();
    summary.clients = shared.accepted.load(Ordering::SeqCst);
    shared.stop.store(true, Ordering::SeqCst);
    Ok(summary)
}

/// Binds the listeners (failing at once if a port is taken) and starts the
/// simulation loop.
pub fn start(sim: ServeSim, opts: &ServeOptions) -> Result<ServerHandle> {
    let listener = TcpListener::bind((opts.host.as_str(), opts.port)).with_context(|| format!("cannot bind {}:{}", opts.host, opts.port))?;
    let ws_listener = match opts.ws_port {
        Some(p) => Some(TcpListener::bind((opts.host.as_str(), p)).with_context(|| format!("cannot bind {}:{p}", opts.host))?),
        None => None,
    };
    let addr = listener.local_addr()?;
    let ws_addr = ws_listener.as_ref().map(|l| l.local_addr()).transpose()?;
    let shared = Arc::new(Shared { stop: AtomicBool::new(false), clients: Broadcast::default(), accepted: AtomicU64::new(0) });
    let (inbox_tx, inbox_rx) = mpsc::channel();
    let mut acceptors = Vec::new();
    {
        let (s, i, b) = (Arc::clone(&shared), inbox_tx.clone(), opts.client_buffer);
        acceptors.push(std::thread::spawn(move || accept_loop(listener, s, i, b, false)));
    }
    if let Some(l) = ws_listener {
        let (s, i, b) = (Arc::clone(&shared), inbox_tx.clone(), opts.client_buffer);
        acceptors.push(std::thread::spawn(move || accept_loop(l, s, i, b, true)));
    }
    drop(inbox_tx);
    let (s, hz, max) = (Arc::clone(&shared), opts.tick_hz, opts.max_ticks);
    let sim = std::thread::spawn(move || sim_loop(sim, s, inbox_rx, hz, max));
    Ok(ServerHandle { addr, ws_addr, shared, sim: Some(sim), acceptors })
}
