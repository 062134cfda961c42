//! Live HTTP/WebSocket service around a single scenario run.
//!
//! REST (all documents carry `"v": 1`):
//!
//! - `GET /api/state`: latest paired snapshot and `terminal_state`, which is
//!   `idle` before the run starts and `running` while it executes.
//! - `GET /api/metrics`: `{ "v": 1, "report": MetricsReport | null }`.
//! - `GET /api/pending`: `{ "v": 1, "plans": [PendingPlan] }`, every plan raised so far.
//! - `POST /api/pending/{id}/decision` with `{ "verdict": "approve" | "reject",
//!   "actor": "<name>" }`: 200 with the plan, 404 unknown id, 409 when the plan
//!   is not awaiting a decision, 400 for a malformed body.
//!
//! `WS /api/stream` pushes one `tick` frame per 10 ms of simulated time with
//! the incidents raised since the previous frame, a `pending` frame whenever a
//! plan changes, and a final `terminal` frame.
//!
//! The run loop executes on its own thread. Decisions reach it through a
//! queue, so HTTP handlers never touch simulation state directly.

use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::config::{HitlMode, ScenarioConfig};
use crate::control::metrics::MetricsReport;
use crate::control::monitor::Incident;
use crate::control::runlog::{TerminalState, TraceRow};
use crate::control::{run_scenario_with, Observer};
use crate::hitl::{AutoApprove, DecisionSource, PendingPlan, PlanStatus, Verdict};

/// Simulated milliseconds between stream frames.
pub const FRAME_PERIOD_MS: f64 = 10.0;

#[derive(Debug, Clone, Copy)]
pub struct ServeOptions {
    /// Simulation speed relative to wall-clock time; infinite runs unpaced.
    pub speed: f64,
}

impl Default for ServeOptions {
    fn default() -> Self {
        Self { speed: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Idle,
    Running,
    Completed,
    Blocked,
    WatchdogTimeout,
    Failed,
}

impl From<TerminalState> for RunStatus {
    fn from(t: TerminalState) -> Self {
        match t {
            TerminalState::Completed => RunStatus::Completed,
            TerminalState::Blocked => RunStatus::Blocked,
            TerminalState::WatchdogTimeout => RunStatus::WatchdogTimeout,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    verdict: Verdict,
    actor: String,
}

struct DecisionMsg {
    plan_id: String,
    verdict: Verdict,
    actor: String,
}

#[derive(Default)]
struct Snapshot {
    status: Option<RunStatus>,
    rows: Vec<TraceRow>,
    plans: Vec<PendingPlan>,
    since_frame: Vec<Incident>,
    error: Option<String>,
}

struct Shared {
    cfg: ScenarioConfig,
    opts: ServeOptions,
    snap: Mutex<Snapshot>,
    stream: broadcast::Sender<String>,
    decisions_tx: Mutex<Option<mpsc::Sender<DecisionMsg>>>,
    decisions_rx: Mutex<Option<mpsc::Receiver<DecisionMsg>>>,
}

impl Shared {
    fn publish(&self, doc: Value) {
        // no subscribers is fine
        let _ = self.stream.send(doc.to_string());
    }
}

pub fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

fn row_doc(row: &TraceRow) -> Value {
    json!({
        "tick": row.tick,
        "ts_r_ms": row.ts_r_ms,
        "ts_v_ms": row.ts_v_ms,
        "pr": row.pr,
        "pv": row.pv,
        "dev_pos_m": row.dev_pos_m,
        "dev_ts_ms": row.dev_ts_ms,
        "clearance_min_m": finite_or_null(row.clearance_min_m),
    })
}

struct LiveObserver {
    shared: Arc<Shared>,
    stride: u64,
    started: Instant,
    tick_ms: f64,
}

impl Observer for LiveObserver {
    fn on_incident(&mut self, incident: &Incident) {
        self.shared.snap.lock().unwrap().since_frame.push(incident.clone());
    }

    fn on_row(&mut self, row: &TraceRow) {
        let frame = {
            let mut s = self.shared.snap.lock().unwrap();
            s.rows.push(row.clone());
            if row.tick.is_multiple_of(self.stride) {
                let incidents: Vec<Value> = s
                    .since_frame
                    .drain(..)
                    .map(|i| {
                        json!({
                            "kind": i.kind,
                            "tick": i.tick,
                            "measured": i.measured,
                            "bound": i.bound,
                        })
                    })
                    .collect();
                let mut doc = row_doc(row);
                doc["v"] = json!(1);
                doc["type"] = json!("tick");
                doc["incidents"] = Value::Array(incidents);
                Some(doc)
            } else {
                None
            }
        };
        if let Some(doc) = frame {
            self.shared.publish(doc);
        }
        let speed = self.shared.opts.speed;
        if speed.is_finite() && speed > 0.0 {
            let sim = Duration::from_secs_f64((row.tick as f64 + 1.0) * self.tick_ms * 1e-3 / speed);
            let elapsed = self.started.elapsed();
            if sim > elapsed {
                std::thread::sleep(sim - elapsed);
            }
        }
    }

    fn on_pending(&mut self, plan: &PendingPlan) {
        {
            let mut s = self.shared.snap.lock().unwrap();
            match s.plans.iter_mut().find(|p| p.id == plan.id) {
                Some(p) => *p = plan.clone(),
                None => s.plans.push(plan.clone()),
            }
        }
        self.shared.publish(json!({ "v": 1, "type": "pending", "plan": plan }));
    }

    fn on_terminal(&mut self, state: TerminalState) {
        self.shared.snap.lock().unwrap().status = Some(state.into());
        self.shared
            .publish(json!({ "v": 1, "type": "terminal", "terminal_state": state }));
    }
}

/// Waits on the decision queue for a verdict on the given plan. Time spent
/// waiting does not advance the simulation.
struct LiveDecisions {
    rx: mpsc::Receiver<DecisionMsg>,
    shared: Arc<Shared>,
}

impl DecisionSource for LiveDecisions {
    fn decide(&mut self, plan: &PendingPlan) -> Option<(Verdict, String)> {
        if plan.status != PlanStatus::AwaitingDecision {
            return None;
        }
        {
            // make the plan visible before anyone can answer it
            let mut s = self.shared.snap.lock().unwrap();
            if !s.plans.iter().any(|p| p.id == plan.id) {
                s.plans.push(plan.clone());
            }
        }
        loop {
            let msg = self.rx.recv().ok()?;
            if msg.plan_id == plan.id {
                return Some((msg.verdict, msg.actor));
            }
        }
    }
}

/// A service instance bound to one scenario. The run starts on [`start_run`].
///
/// [`start_run`]: TwinService::start_run
#[derive(Clone)]
pub struct TwinService {
    shared: Arc<Shared>,
}

impl TwinService {
    pub fn new(cfg: ScenarioConfig, opts: ServeOptions) -> Self {
        let (stream, _) = broadcast::channel(4096);
        let (tx, rx) = mpsc::channel();
        Self {
            shared: Arc::new(Shared {
                cfg,
                opts,
                snap: Mutex::new(Snapshot::default()),
                stream,
                decisions_tx: Mutex::new(Some(tx)),
                decisions_rx: Mutex::new(Some(rx)),
            }),
        }
    }

    pub fn subscribe(&self) -> broadcast::Receiver<String> {
        self.shared.stream.subscribe()
    }

    pub fn status(&self) -> RunStatus {
        self.shared.snap.lock().unwrap().status.unwrap_or(RunStatus::Idle)
    }

    /// Starts the run on a background thread. Returns false if already started.
    pub fn start_run(&self) -> bool {
        let Some(rx) = self.shared.decisions_rx.lock().unwrap().take() else {
            return false;
        };
        self.shared.snap.lock().unwrap().status = Some(RunStatus::Running);
        let shared = Arc::clone(&self.shared);
        std::thread::spawn(move || {
            let tick_ms = shared.cfg.tick_ms;
            let mut observer = LiveObserver {
                shared: Arc::clone(&shared),
                stride: (FRAME_PERIOD_MS / tick_ms).round().max(1.0) as u64,
                started: Instant::now(),
                tick_ms,
            };
            let result = match shared.cfg.hitl_mode {
                HitlMode::AutoApprove => run_scenario_with(&shared.cfg, &mut AutoApprove, &mut observer),
                HitlMode::Gate => {
                    let mut live = LiveDecisions {
                        rx,
                        shared: Arc::clone(&shared),
                    };
                    run_scenario_with(&shared.cfg, &mut live, &mut observer)
                }
            };
            if let Err(e) = result {
                let mut s = shared.snap.lock().unwrap();
                s.status = Some(RunStatus::Failed);
                s.error = Some(e.to_string());
            }
        });
        true
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/api/state", get(get_state))
            .route("/api/metrics", get(get_metrics))
            .route("/api/pending", get(get_pending))
            .route("/api/pending/{id}/decision", post(post_decision))
            .route("/api/stream", get(stream))
            .with_state(self.clone())
    }
}

async fn get_state(State(svc): State<TwinService>) -> Json<Value> {
    let s = svc.shared.snap.lock().unwrap();
    let status = s.status.unwrap_or(RunStatus::Idle);
    let mut doc = match s.rows.last() {
        Some(row) => row_doc(row),
        None => json!({}),
    };
    doc["v"] = json!(1);
    doc["terminal_state"] = json!(status);
    if let Some(e) = &s.error {
        doc["error"] = json!(e);
    }
    Json(doc)
}

async fn get_metrics(State(svc): State<TwinService>) -> Json<Value> {
    let s = svc.shared.snap.lock().unwrap();
    let terminal = match s.status {
        Some(RunStatus::Completed) => Some(TerminalState::Completed),
        Some(RunStatus::Blocked) => Some(TerminalState::Blocked),
        Some(RunStatus::WatchdogTimeout) => Some(TerminalState::WatchdogTimeout),
        _ => None,
    };
    let report = MetricsReport::from_rows(&s.rows, svc.shared.cfg.tick_ms, terminal).ok();
    Json(json!({ "v": 1, "report": report }))
}

async fn get_pending(State(svc): State<TwinService>) -> Json<Value> {
    let s = svc.shared.snap.lock().unwrap();
    Json(json!({ "v": 1, "plans": s.plans }))
}

fn error(status: StatusCode, msg: String) -> Response {
    (status, Json(json!({ "v": 1, "error": msg }))).into_response()
}

async fn post_decision(State(svc): State<TwinService>, Path(id): Path<String>, body: Bytes) -> Response {
    let body: DecisionBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed decision body: {e}")),
    };
    if body.actor.trim().is_empty() {
        return error(StatusCode::BAD_REQUEST, "actor must not be empty".into());
    }
    let plan = {
        let mut s = svc.shared.snap.lock().unwrap();
        let Some(plan) = s.plans.iter_mut().find(|p| p.id == id) else {
            return error(StatusCode::NOT_FOUND, format!("no plan with id {id}"));
        };
        if plan.status != PlanStatus::AwaitingDecision || plan.decision.is_some() {
            return error(
                StatusCode::CONFLICT,
                format!("plan {id} is not awaiting a decision"),
            );
        }
        plan.status = match body.verdict {
            Verdict::Approve => PlanStatus::Approved,
            Verdict::Reject => PlanStatus::Rejected,
        };
        plan.clone()
    };
    let sent = svc
        .shared
        .decisions_tx
        .lock()
        .unwrap()
        .as_ref()
        .is_some_and(|tx| {
            tx.send(DecisionMsg {
                plan_id: id.clone(),
                verdict: body.verdict,
                actor: body.actor.clone(),
            })
            .is_ok()
        });
    if !sent {
        return error(StatusCode::CONFLICT, "run is no longer accepting decisions".into());
    }
    (StatusCode::OK, Json(json!({ "v": 1, "plan": plan }))).into_response()
}

async fn stream(State(svc): State<TwinService>, ws: WebSocketUpgrade) -> Response {
    let rx = svc.subscribe();
    ws.on_upgrade(move |socket| forward(socket, rx))
}

async fn forward(mut socket: WebSocket, mut rx: broadcast::Receiver<String>) {
    loop {
        match rx.recv().await {
            Ok(doc) => {
                if socket.send(Message::Text(doc.into())).await.is_err() {
                    return;
                }
            }
            Err(broadcast::error::RecvError::Lagged(_)) => continue,
            Err(broadcast::error::RecvError::Closed) => {
                let _ = socket.send(Message::Close(None)).await;
                return;
            }
        }
    }
}

/// Binds `0.0.0.0:port`, starts the run and serves until the process exits.
pub async fn serve(cfg: ScenarioConfig, port: u16, opts: ServeOptions) -> std::io::Result<()> {
    let svc = TwinService::new(cfg, opts);
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    svc.start_run();
    axum::serve(listener, svc.router()).await
}
