//! Live closed loop over WebSocket.
//!
//! One ticker task owns the [`Simulation`]. Client sessions forward their
//! messages to it over a queue; it applies them between ticks and fans every
//! frame out through a bounded per-client channel, dropping frames for a
//! client that falls behind rather than stalling the loop.
//!
//! Protocol (text frames, JSON objects tagged by `"t"`):
//!
//! * server → client
//!   * `hello`: sent once on connect, with `schema`, the scenario as TOML
//!     (`config`), `client_id`, whether this client holds the steering lock
//!     (`steering`), `tick_hz`, `max_manual_speed`, `boost_cooldown_steps`,
//!     `paused` and the next step index `k`.
//!   * `state`: one per tick, carrying every trace column plus
//!     `boost_cooldown` (steps until a boost is accepted) and `manual`.
//!   * `lock`: the steering lock passed to this client.
//!   * `paused`, `reset`: loop control acknowledgements, sent to everyone.
//!   * `warning`: a rejected or unknown message; the loop keeps running.
//! * client → server
//!   * `steer {vx, vy}`: target velocity in meters per step, capped at
//!     `max_manual_speed`; it replaces the drift until changed.
//!   * `boost`: one impulse of magnitude `theta_max` along the steering
//!     direction at the next tick, more than `ell_min` steps after the
//!     previous impulse.
//!   * `pause {paused?}`: set or toggle pause.
//!   * `reset`: restart the scenario from step 0.
//!
//! The first client to connect holds the steering lock; later clients only
//! observe. When the holder leaves, the lock passes to the longest-connected
//! remaining client. With nobody holding it the target moves autonomously.
//! Operator input only ever moves the target: the agents still see nothing
//! but ranges.

use std::collections::BTreeMap;
use std::future::Future;
use std::time::Duration;

use anyhow::{Context, Result};
use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use encircle_core::geometry::PlanarVector;
use encircle_core::trace_io::{record_to_json, SCHEMA_VERSION};
use encircle_core::{ScenarioConfig, Simulation, TargetInput};
use futures_util::{SinkExt, StreamExt};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};

/// Frames queued per client before further frames are dropped.
const FRAME_BUFFER: usize = 256;
const COMMAND_BUFFER: usize = 1024;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub tick_hz: f64,
    /// Manual steering speed cap; defaults to the simulator's own.
    pub max_manual_speed: Option<f64>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self {
            tick_hz: 20.0,
            max_manual_speed: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase", deny_unknown_fields)]
enum ClientMessage {
    Steer { vx: f64, vy: f64 },
    Boost,
    Pause { paused: Option<bool> },
    Reset,
}

const KNOWN_TYPES: [&str; 4] = ["steer", "boost", "pause", "reset"];

/// Decodes one client text frame, or explains why it was rejected.
fn parse_client_message(text: &str) -> Result<ClientMessage, String> {
    let value: Value = serde_json::from_str(text).map_err(|e| format!("malformed message: {e}"))?;
    let Some(kind) = value.get("t").and_then(Value::as_str) else {
        return Err("malformed message: missing string field `t`".into());
    };
    if !KNOWN_TYPES.contains(&kind) {
        return Err(format!("unknown message type `{kind}`"));
    }
    let kind = kind.to_string();
    serde_json::from_value(value).map_err(|e| format!("malformed `{kind}` message: {e}"))
}

enum Command {
    Join {
        frames: mpsc::Sender<Utf8Bytes>,
        reply: oneshot::Sender<u64>,
    },
    Leave {
        id: u64,
    },
    Text {
        id: u64,
        text: String,
    },
    Binary {
        id: u64,
    },
}

struct Ticker {
    cfg: ScenarioConfig,
    opts: ServeOptions,
    sim: Simulation,
    clients: BTreeMap<u64, mpsc::Sender<Utf8Bytes>>,
    next_id: u64,
    holder: Option<u64>,
    steer: PlanarVector,
    boost_pending: bool,
    paused: bool,
}

fn frame(value: &Value) -> Utf8Bytes {
    value.to_string().into()
}

impl Ticker {
    fn new(cfg: ScenarioConfig, opts: ServeOptions) -> Self {
        let sim = Self::fresh_sim(&cfg, &opts);
        Self {
            cfg,
            opts,
            sim,
            clients: BTreeMap::new(),
            next_id: 1,
            holder: None,
            steer: PlanarVector::ZERO,
            boost_pending: false,
            paused: false,
        }
    }

    fn fresh_sim(cfg: &ScenarioConfig, opts: &ServeOptions) -> Simulation {
        let sim = Simulation::new(cfg.clone());
        match opts.max_manual_speed {
            Some(v) => sim.with_max_manual_speed(v),
            None => sim,
        }
    }

    fn send(&self, id: u64, value: &Value) {
        if let Some(tx) = self.clients.get(&id) {
            if tx.try_send(frame(value)).is_err() {
                log::debug!("client {id} is behind; frame dropped");
            }
        }
    }

    fn broadcast(&self, value: &Value) {
        let f = frame(value);
        for (id, tx) in &self.clients {
            if tx.try_send(f.clone()).is_err() {
                log::debug!("client {id} is behind; frame dropped");
            }
        }
    }

    fn warn(&self, id: u64, message: impl Into<String>) {
        self.send(id, &json!({"t": "warning", "message": message.into()}));
    }

    fn reset(&mut self) {
        self.sim = Self::fresh_sim(&self.cfg, &self.opts);
        self.steer = PlanarVector::ZERO;
        self.boost_pending = false;
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Join { frames, reply } => {
                let id = self.next_id;
                self.next_id += 1;
                if reply.send(id).is_err() {
                    return;
                }
                self.clients.insert(id, frames);
                let steering = self.holder.is_none();
                if steering {
                    self.holder = Some(id);
                    self.steer = PlanarVector::ZERO;
                }
                log::info!("client {id} connected (steering: {steering})");
                self.send(
                    id,
                    &json!({
                        "t": "hello",
                        "schema": SCHEMA_VERSION,
                        "config": self.cfg.to_toml(),
                        "client_id": id,
                        "steering": steering,
                        "tick_hz": self.opts.tick_hz,
                        "max_manual_speed": self.sim.max_manual_speed(),
                        "boost_cooldown_steps": self.cfg.target.ell_min,
                        "paused": self.paused,
                        "k": self.sim.step_index(),
                    }),
                );
            }
            Command::Leave { id } => {
                self.clients.remove(&id);
                log::info!("client {id} disconnected");
                if self.holder == Some(id) {
                    self.holder = self.clients.keys().next().copied();
                    self.steer = PlanarVector::ZERO;
                    self.boost_pending = false;
                    if let Some(next) = self.holder {
                        log::info!("steering lock passed to client {next}");
                        self.send(next, &json!({"t": "lock", "steering": true}));
                    }
                }
            }
            Command::Binary { id } => self.warn(id, "binary frames are not supported"),
            Command::Text { id, text } => match parse_client_message(&text) {
                Err(message) => self.warn(id, message),
                Ok(_) if self.holder != Some(id) => {
                    self.warn(id, "steering is held by another client")
                }
                Ok(msg) => self.apply(id, msg),
            },
        }
    }

    fn apply(&mut self, id: u64, msg: ClientMessage) {
        match msg {
            ClientMessage::Steer { vx, vy } => {
                let v = PlanarVector::new(vx, vy);
                if v.is_finite() {
                    self.steer = v;
                } else {
                    self.warn(id, "steer velocity must be finite");
                }
            }
            ClientMessage::Boost => {
                let cooldown = self.sim.boost_cooldown();
                if cooldown > 0 {
                    self.warn(id, format!("boost unavailable for {cooldown} more steps"));
                } else {
                    self.boost_pending = true;
                }
            }
            ClientMessage::Pause { paused } => {
                self.paused = paused.unwrap_or(!self.paused);
                self.broadcast(&json!({"t": "paused", "paused": self.paused}));
            }
            ClientMessage::Reset => {
                self.reset();
                self.broadcast(&json!({"t": "reset"}));
            }
        }
    }

    fn tick(&mut self) {
        let manual = self.holder.is_some();
        let input = if manual {
            TargetInput::Manual {
                velocity: self.steer,
                boost: std::mem::take(&mut self.boost_pending),
            }
        } else {
            TargetInput::Autonomous
        };
        match self.sim.step(input) {
            Ok(tick) => {
                let mut value = record_to_json(&tick.record);
                if let Value::Object(map) = &mut value {
                    map.insert("t".into(), json!("state"));
                    map.insert("boost_cooldown".into(), json!(self.sim.boost_cooldown()));
                    map.insert("manual".into(), json!(manual));
                }
                self.broadcast(&value);
            }
            Err(e) => {
                let k = self.sim.step_index();
                log::warn!("simulation fault at step {k}: {e}; resetting");
                self.broadcast(&json!({
                    "t": "warning",
                    "message": format!("simulation fault at step {k}: {e}; scenario restarted"),
                }));
                self.reset();
                self.broadcast(&json!({"t": "reset"}));
            }
        }
    }

    async fn run(mut self, mut commands: mpsc::Receiver<Command>) {
        let period = Duration::from_secs_f64(1.0 / self.opts.tick_hz);
        let mut interval = tokio::time::interval(period);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        loop {
            tokio::select! {
                _ = interval.tick() => {
                    if !self.paused {
                        self.tick();
                    }
                }
                cmd = commands.recv() => match cmd {
                    Some(cmd) => self.handle(cmd),
                    None => break,
                },
            }
        }
    }
}

async fn ws_handler(
    ws: WebSocketUpgrade,
    State(commands): State<mpsc::Sender<Command>>,
) -> Response {
    ws.on_upgrade(move |socket| client_session(socket, commands))
}

async fn index() -> impl IntoResponse {
    "encircle live server: connect a WebSocket client to /ws\n"
}

async fn client_session(socket: WebSocket, commands: mpsc::Sender<Command>) {
    let (mut sink, mut stream) = socket.split();
    let (frames, mut outgoing) = mpsc::channel(FRAME_BUFFER);
    let (reply, id) = oneshot::channel();
    if commands
        .send(Command::Join { frames, reply })
        .await
        .is_err()
    {
        return;
    }
    let Ok(id) = id.await else { return };

    let writer = tokio::spawn(async move {
        while let Some(f) = outgoing.recv().await {
            if sink.send(Message::Text(f)).await.is_err() {
                break;
            }
        }
    });

    while let Some(msg) = stream.next().await {
        let cmd = match msg {
            Ok(Message::Text(text)) => Command::Text {
                id,
                text: text.to_string(),
            },
            Ok(Message::Binary(_)) => Command::Binary { id },
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        if commands.send(cmd).await.is_err() {
            break;
        }
    }
    let _ = commands.send(Command::Leave { id }).await;
    writer.abort();
}

/// Builds the HTTP router and starts the ticker task. Must be called from
/// within a Tokio runtime.
pub fn router(cfg: ScenarioConfig, opts: ServeOptions) -> Router {
    let (tx, rx) = mpsc::channel(COMMAND_BUFFER);
    tokio::spawn(Ticker::new(cfg, opts).run(rx));
    Router::new()
        .route("/", get(index))
        .route("/ws", get(ws_handler))
        .with_state(tx)
}

/// Serves on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    cfg: ScenarioConfig,
    opts: ServeOptions,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<()> {
    anyhow::ensure!(
        opts.tick_hz.is_finite() && opts.tick_hz > 0.0,
        "tick rate must be positive, got {}",
        opts.tick_hz
    );
    let app = router(cfg, opts);
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .context("serving")
}
