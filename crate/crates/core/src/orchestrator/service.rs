//! HTTP+JSON session protocol for human followers.
//!
//! Every payload carries `schema`. A session walks through
//! `executing -> feedback -> executing ... -> done`:
//!
//! | request | body | response |
//! |---|---|---|
//! | `POST /v1/sessions` | none | [`InstructionPayload`] |
//! | `POST /v1/sessions/{id}/move` | [`MoveRequest`] | [`MoveResponse`] |
//! | `POST /v1/sessions/{id}/complete` | [`CompleteRequest`] | [`ReviewPayload`] |
//! | `POST /v1/sessions/{id}/feedback` | [`FeedbackRequest`] | [`FeedbackResponse`] |
//! | `GET /v1/sessions/{id}/log` | none | [`SessionLog`] |
//!
//! Failures answer with [`ErrorBody`]. The system plan never leaves the
//! server.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::watch;

use super::game::{Game, PendingTurn, Speaker};
use super::{ExperimentConfig, InteractionRecord, OrchestratorError};
use crate::follower::{Execution, Feedback};
use crate::genmodel::{BehaviorProb, Model};
use crate::hexworld::{Action, Agent, CellView, Pose, WorldConfig, WorldState};
use crate::seed;

pub const SCHEMA_VERSION: u32 = 1;

/// One visible cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisibleCell {
    pub h: i32,
    pub w: i32,
    #[serde(flatten)]
    pub view: CellView,
}

/// What the follower may see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPayload {
    pub pose: Pose,
    pub moves_left: u32,
    pub score: u32,
    pub cells: Vec<VisibleCell>,
}

impl ViewPayload {
    pub fn of(state: &WorldState) -> Self {
        let view = state.follower_view();
        Self {
            pose: view.pose,
            moves_left: state.moves_left,
            score: state.score,
            cells: view
                .cells
                .into_iter()
                .map(|(c, v)| VisibleCell {
                    h: c.h,
                    w: c.w,
                    view: v,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionPayload {
    pub schema: u32,
    pub session_id: String,
    /// Position of this instruction within the game.
    pub index: u32,
    pub instruction: String,
    pub view: ViewPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveRequest {
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveResponse {
    pub schema: u32,
    pub legal: bool,
    /// Why an illegal move was refused.
    pub reason: Option<String>,
    pub view: ViewPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompleteRequest {
    /// The follower could not carry out the instruction.
    pub terminated: bool,
}

/// Top-down review of the execution shown before the feedback questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewPayload {
    pub schema: u32,
    pub instruction: String,
    pub path: Vec<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackRequest {
    pub perceived_correct: bool,
    pub grammatical: bool,
    /// Repeating a request with the same key returns the first answer.
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackResponse {
    pub schema: u32,
    pub game_over: bool,
    pub score: u32,
    pub next: Option<InstructionPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum SessionEvent {
    Move {
        action: Action,
    },
    Complete {
        terminated: bool,
    },
    Feedback {
        perceived_correct: bool,
        grammatical: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionLog {
    pub schema: u32,
    pub session_id: String,
    pub round: u32,
    pub interaction: u32,
    pub events: Vec<SessionEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema: u32,
    pub error: ErrorDetail,
}

#[derive(Debug, Error, PartialEq)]
pub enum ServiceError {
    #[error("no session `{0}`")]
    NotFound(String),
    #[error("session `{0}` expired")]
    Expired(String),
    #[error("{0}")]
    Phase(String),
    #[error("malformed request: {0}")]
    Malformed(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    fn status(&self) -> (StatusCode, &'static str) {
        match self {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, "not-found"),
            ServiceError::Expired(_) => (StatusCode::GONE, "expired"),
            ServiceError::Phase(_) => (StatusCode::CONFLICT, "wrong-phase"),
            ServiceError::Malformed(_) => (StatusCode::BAD_REQUEST, "malformed"),
            ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, code) = self.status();
        let body = ErrorBody {
            schema: SCHEMA_VERSION,
            error: ErrorDetail {
                code: code.into(),
                message: self.to_string(),
            },
        };
        (status, Json(body)).into_response()
    }
}

impl From<OrchestratorError> for ServiceError {
    fn from(e: OrchestratorError) -> Self {
        ServiceError::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Executing,
    Feedback,
    Done,
}

struct Session {
    game: Game,
    turn: Option<PendingTurn>,
    current: WorldState,
    poses: Vec<Pose>,
    actions: Vec<Action>,
    terminated: bool,
    phase: Phase,
    events: Vec<SessionEvent>,
    touched: Instant,
    answered: Option<(String, FeedbackResponse)>,
}

/// What the service needs to run games.
#[derive(Debug, Clone)]
pub struct ServiceSettings {
    pub seed: u64,
    pub round: u32,
    pub world: WorldConfig,
    pub tau: f64,
    pub behavior: BehaviorProb,
    pub ttl: Duration,
}

impl ServiceSettings {
    pub fn from_config(config: &ExperimentConfig, round: u32) -> Self {
        Self {
            seed: config.seed,
            round,
            world: config.world.clone(),
            tau: config.tau,
            behavior: config.behavior,
            ttl: Duration::from_secs(config.session_ttl_secs),
        }
    }
}

#[derive(Default)]
struct Inner {
    sessions: HashMap<String, Session>,
    expired: HashSet<String>,
    next_interaction: u32,
    records: Vec<InteractionRecord>,
}

/// All live sessions; requests for one session are serialized by the lock.
pub struct SessionManager {
    members: Vec<Model>,
    settings: ServiceSettings,
    inner: Mutex<Inner>,
    games_done: watch::Sender<u32>,
}

impl SessionManager {
    pub fn new(members: Vec<Model>, settings: ServiceSettings) -> Self {
        Self {
            members,
            settings,
            inner: Mutex::new(Inner::default()),
            games_done: watch::channel(0).0,
        }
    }

    fn speaker(&self) -> Speaker<'_> {
        Speaker::Ensemble {
            members: &self.members,
            tau: self.settings.tau,
            behavior: self.settings.behavior,
        }
    }

    /// Number of games played to the end.
    pub fn subscribe(&self) -> watch::Receiver<u32> {
        self.games_done.subscribe()
    }

    /// Records of every instruction that received feedback, in id order.
    pub fn records(&self) -> Vec<InteractionRecord> {
        let mut out = self.lock().records.clone();
        out.sort_by_key(|r| r.id);
        out
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn session_id(&self, interaction: u32) -> String {
        format!(
            "{:016x}",
            seed::derive(
                self.settings.seed,
                &[
                    seed::tag("session"),
                    self.settings.round as u64,
                    interaction as u64
                ]
            )
        )
    }

    fn expire(&self, inner: &mut Inner) {
        let ttl = self.settings.ttl;
        let stale: Vec<String> = inner
            .sessions
            .iter()
            .filter(|(_, s)| s.touched.elapsed() > ttl)
            .map(|(k, _)| k.clone())
            .collect();
        for id in stale {
            inner.sessions.remove(&id);
            inner.expired.insert(id);
        }
    }

    fn with_session<T>(
        &self,
        id: &str,
        f: impl FnOnce(&Self, &mut Session, &mut Vec<InteractionRecord>) -> Result<T, ServiceError>,
    ) -> Result<T, ServiceError> {
        let mut guard = self.lock();
        self.expire(&mut guard);
        let inner = &mut *guard;
        let Some(s) = inner.sessions.get_mut(id) else {
            return Err(if inner.expired.contains(id) {
                ServiceError::Expired(id.into())
            } else {
                ServiceError::NotFound(id.into())
            });
        };
        s.touched = Instant::now();
        f(self, s, &mut inner.records)
    }

    /// Starts the next game and returns its first instruction.
    pub fn create(&self) -> Result<InstructionPayload, ServiceError> {
        let interaction = {
            let mut inner = self.lock();
            let i = inner.next_interaction;
            inner.next_interaction += 1;
            i
        };
        self.open(interaction)
    }

    /// Starts game `interaction` of the configured round.
    pub fn open(&self, interaction: u32) -> Result<InstructionPayload, ServiceError> {
        let id = self.session_id(interaction);
        let mut game = Game::new(
            self.settings.seed,
            self.settings.round,
            interaction,
            &self.settings.world,
        )?;
        let turn = game
            .next_turn(&self.speaker())?
            .ok_or_else(|| ServiceError::Internal("new game has nothing to do".into()))?;
        let mut session = Session {
            game,
            turn: None,
            current: turn.start_state.clone(),
            poses: Vec::new(),
            actions: Vec::new(),
            terminated: false,
            phase: Phase::Executing,
            events: Vec::new(),
            touched: Instant::now(),
            answered: None,
        };
        let payload = begin(&id, &mut session, turn);
        let mut inner = self.lock();
        self.expire(&mut inner);
        inner.expired.remove(&id);
        inner.sessions.insert(id, session);
        Ok(payload)
    }

    pub fn step(&self, id: &str, action: Action) -> Result<MoveResponse, ServiceError> {
        self.with_session(id, |_, s, _| {
            if s.phase != Phase::Executing {
                return Err(ServiceError::Phase(
                    "moves are only accepted while executing".into(),
                ));
            }
            let mut next = s.current.clone();
            let reason = match next.step(Agent::Follower, action) {
                Ok(_) => {
                    s.current = next;
                    s.poses.push(s.current.follower);
                    s.actions.push(action);
                    s.events.push(SessionEvent::Move { action });
                    None
                }
                Err(e) => Some(e.to_string()),
            };
            Ok(MoveResponse {
                schema: SCHEMA_VERSION,
                legal: reason.is_none(),
                reason,
                view: ViewPayload::of(&s.current),
            })
        })
    }

    pub fn complete(&self, id: &str, terminated: bool) -> Result<ReviewPayload, ServiceError> {
        self.with_session(id, |_, s, _| {
            if s.phase != Phase::Executing {
                return Err(ServiceError::Phase("instruction already completed".into()));
            }
            s.terminated = terminated;
            s.phase = Phase::Feedback;
            s.events.push(SessionEvent::Complete { terminated });
            let instruction = s
                .turn
                .as_ref()
                .map(|t| t.sample.tokens.text())
                .unwrap_or_default();
            Ok(ReviewPayload {
                schema: SCHEMA_VERSION,
                instruction,
                path: s.poses.clone(),
            })
        })
    }

    pub fn feedback(
        &self,
        id: &str,
        req: FeedbackRequest,
    ) -> Result<FeedbackResponse, ServiceError> {
        let (response, finished) = self.with_session(id, |mgr, s, records| {
            if let (Some(key), Some((seen, answer))) = (&req.idempotency_key, &s.answered) {
                if key == seen {
                    return Ok((answer.clone(), false));
                }
            }
            if s.phase != Phase::Feedback {
                return Err(ServiceError::Phase(
                    "feedback is only accepted after completing the instruction".into(),
                ));
            }
            let turn = s.turn.take().expect("a turn is pending during feedback");
            let feedback = Feedback {
                perceived_correct: req.perceived_correct,
                grammatical: req.grammatical,
            };
            s.events.push(SessionEvent::Feedback {
                perceived_correct: req.perceived_correct,
                grammatical: req.grammatical,
            });
            let execution = Execution {
                poses: std::mem::take(&mut s.poses),
                actions: std::mem::take(&mut s.actions),
            };
            let current = s.current.clone();
            records.push(
                s.game
                    .finish(turn, execution, feedback, s.terminated, None, &current),
            );
            let next = match s.game.next_turn(&mgr.speaker())? {
                Some(turn) => Some(begin(id, s, turn)),
                None => {
                    s.phase = Phase::Done;
                    None
                }
            };
            let answer = FeedbackResponse {
                schema: SCHEMA_VERSION,
                game_over: next.is_none(),
                score: s.game.score(),
                next,
            };
            if let Some(key) = &req.idempotency_key {
                s.answered = Some((key.clone(), answer.clone()));
            }
            Ok((answer.clone(), answer.game_over))
        })?;
        if finished {
            self.games_done.send_modify(|n| *n += 1);
        }
        Ok(response)
    }

    pub fn log(&self, id: &str) -> Result<SessionLog, ServiceError> {
        self.with_session(id, |_, s, _| {
            Ok(SessionLog {
                schema: SCHEMA_VERSION,
                session_id: id.to_string(),
                round: s.game.round,
                interaction: s.game.interaction,
                events: s.events.clone(),
            })
        })
    }

    /// Re-runs a logged session against this manager.
    pub fn replay(&self, log: &SessionLog) -> Result<(), ServiceError> {
        let first = self.open(log.interaction)?;
        let id = first.session_id;
        for e in &log.events {
            match *e {
                SessionEvent::Move { action } => {
                    self.step(&id, action)?;
                }
                SessionEvent::Complete { terminated } => {
                    self.complete(&id, terminated)?;
                }
                SessionEvent::Feedback {
                    perceived_correct,
                    grammatical,
                } => {
                    self.feedback(
                        &id,
                        FeedbackRequest {
                            perceived_correct,
                            grammatical,
                            idempotency_key: None,
                        },
                    )?;
                }
            }
        }
        Ok(())
    }
}

fn begin(id: &str, s: &mut Session, turn: PendingTurn) -> InstructionPayload {
    s.current = turn.start_state.clone();
    s.poses = vec![s.current.follower];
    s.actions.clear();
    s.terminated = false;
    s.phase = Phase::Executing;
    let payload = InstructionPayload {
        schema: SCHEMA_VERSION,
        session_id: id.to_string(),
        index: turn.id.index,
        instruction: turn.sample.tokens.text(),
        view: ViewPayload::of(&s.current),
    };
    s.turn = Some(turn);
    payload
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    b.map(|Json(t)| t)
        .map_err(|e| ServiceError::Malformed(e.body_text()))
}

async fn create(
    State(m): State<Arc<SessionManager>>,
) -> Result<Json<InstructionPayload>, ServiceError> {
    m.create().map(Json)
}

async fn step(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    b: Result<Json<MoveRequest>, JsonRejection>,
) -> Result<Json<MoveResponse>, ServiceError> {
    let req = body(b)?;
    m.step(&id, req.action).map(Json)
}

async fn complete(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    b: Result<Json<CompleteRequest>, JsonRejection>,
) -> Result<Json<ReviewPayload>, ServiceError> {
    let req = body(b)?;
    m.complete(&id, req.terminated).map(Json)
}

async fn feedback(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
    b: Result<Json<FeedbackRequest>, JsonRejection>,
) -> Result<Json<FeedbackResponse>, ServiceError> {
    let req = body(b)?;
    m.feedback(&id, req).map(Json)
}

async fn log(
    State(m): State<Arc<SessionManager>>,
    Path(id): Path<String>,
) -> Result<Json<SessionLog>, ServiceError> {
    m.log(&id).map(Json)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "schema": SCHEMA_VERSION, "status": "ok" }))
}

pub fn router(manager: Arc<SessionManager>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create))
        .route("/v1/sessions/{id}/move", post(step))
        .route("/v1/sessions/{id}/complete", post(complete))
        .route("/v1/sessions/{id}/feedback", post(feedback))
        .route("/v1/sessions/{id}/log", get(log))
        .fallback(|| async { ServiceError::NotFound("route".into()) })
        .with_state(manager)
}

/// Serves until `stop` resolves.
pub async fn serve(
    manager: Arc<SessionManager>,
    port: u16,
    stop: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), OrchestratorError> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("session service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(stop)
        .await?;
    Ok(())
}

/// Collects one round from human followers: serves until `interactions`
/// games have finished.
pub fn collect_human(
    config: &ExperimentConfig,
    members: &[Model],
    round: u32,
) -> Result<Vec<InteractionRecord>, OrchestratorError> {
    let manager = Arc::new(SessionManager::new(
        members.to_vec(),
        ServiceSettings::from_config(config, round),
    ));
    let mut done = manager.subscribe();
    let target = config.interactions;
    let rt = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()?;
    rt.block_on(serve(manager.clone(), config.port, async move {
        let _ = done.wait_for(|&n| n >= target).await;
    }))?;
    Ok(manager.records())
}
