//! HTTP sessions over the gridgame environment.
//!
//! Each session owns one environment and one chronic. Actions on a session
//! are serialized; what-if simulations take a shared lock and may run side
//! by side, but never overlap an action.
//!
//! | method | path                          | body            |
//! |--------|-------------------------------|-----------------|
//! | GET    | `/cases`                      |                 |
//! | GET    | `/chronics`                   |                 |
//! | POST   | `/sessions`                   | [`CreateSession`] |
//! | GET    | `/sessions/{id}/observation`  |                 |
//! | POST   | `/sessions/{id}/action`       | `Action`        |
//! | POST   | `/sessions/{id}/simulate`     | `Action`        |
//! | POST   | `/sessions/{id}/reset`        |                 |
//! | POST   | `/sessions/{id}/suggest`      |                 |
//! | GET    | `/sessions/{id}/layout`       |                 |
//!
//! Every response body carries `schema_version`. Errors look like
//! `{"schema_version": 1, "error": {"code": "...", "message": "...", "detail": ...}}`.

mod error;

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use gridgame::agents::{Agent, AgentSpec};
use gridgame::builtins::{self, Layout};
use gridgame::chronics::{Chronic, InjectionSet};
use gridgame::environment::{Action, CascadeFrame, EnvConfig, Environment, Observation, RewardBreakdown};
use serde::{Deserialize, Serialize};

pub use error::ApiError;

/// Bumped whenever a response shape changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Idle time after which a session is dropped.
    pub session_ttl: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            session_ttl: Duration::from_secs(3600),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub case: String,
    /// Defaults to the first bundled chronic of the case.
    #[serde(default)]
    pub chronic: Option<String>,
    /// Environment settings; omitted fields keep their defaults.
    #[serde(default)]
    pub config: Option<serde_json::Value>,
    /// Agent used by `/suggest`.
    #[serde(default)]
    pub agent: Option<AgentSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub schema_version: u32,
    pub session_id: String,
    pub case: String,
    pub chronic: String,
    pub chronic_length: usize,
    pub step: usize,
    pub observation: Observation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationResponse {
    pub schema_version: u32,
    pub session_id: String,
    pub step: usize,
    /// The last action ended in a load cut; reset to play on.
    pub done: bool,
    /// The chronic is exhausted; reset to start over.
    pub finished: bool,
    /// Absent after a game over or at the end of the chronic.
    pub observation: Option<Observation>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionResponse {
    pub schema_version: u32,
    /// Index of the step just played.
    pub step: usize,
    pub reward: RewardBreakdown,
    pub observation: Option<Observation>,
    pub done: bool,
    pub finished: bool,
    pub overflowed_after_action: Vec<usize>,
    /// Successive solves of the cascade; empty when nothing tripped.
    pub cascade_frames: Vec<CascadeFrame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulateResponse {
    pub schema_version: u32,
    pub reward: RewardBreakdown,
    /// Lines overflowed right after the action.
    pub predicted_overflows: Vec<usize>,
    pub load_was_cut: bool,
    pub cascade_frames: Vec<CascadeFrame>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuggestResponse {
    pub schema_version: u32,
    pub agent: String,
    pub action: Action,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseInfo {
    pub name: String,
    pub substations: usize,
    pub branches: usize,
    pub generators: usize,
    pub loads: usize,
    pub topology_onehot_len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChronicInfo {
    pub name: String,
    pub case: String,
    pub steps: usize,
    pub interval: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Listing<T> {
    pub schema_version: u32,
    pub items: Vec<T>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayoutResponse {
    pub schema_version: u32,
    pub layout: Layout,
    /// `(origin, extremity)` case bus ids per branch, for drawing.
    pub branches: Vec<(u32, u32)>,
}

struct Session {
    case: String,
    env: Environment,
    chronic: Chronic,
    /// Injections drawn by the step that ended in a load cut.
    pending: Option<InjectionSet>,
    finished: bool,
    agent: Option<Mutex<Box<dyn Agent>>>,
}

struct Slot {
    session: tokio::sync::RwLock<Session>,
    last_active: Mutex<Instant>,
}

struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    expired: RwLock<HashSet<String>>,
    cases: OnceLock<Vec<CaseInfo>>,
    chronics: OnceLock<Vec<ChronicInfo>>,
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Self {
        AppState {
            inner: Arc::new(Inner {
                config,
                sessions: RwLock::new(HashMap::new()),
                expired: RwLock::new(HashSet::new()),
                cases: OnceLock::new(),
                chronics: OnceLock::new(),
            }),
        }
    }

    pub fn session_count(&self) -> usize {
        self.inner.sessions.read().unwrap().len()
    }

    fn is_stale(&self, slot: &Slot, now: Instant) -> bool {
        now.duration_since(*slot.last_active.lock().unwrap()) > self.inner.config.session_ttl
    }

    fn expire(&self, id: &str) {
        self.inner.sessions.write().unwrap().remove(id);
        self.inner.expired.write().unwrap().insert(id.to_string());
        log::info!("session {id} expired");
    }

    /// Drops every idle session.
    pub fn sweep(&self) {
        let now = Instant::now();
        let stale: Vec<String> = self
            .inner
            .sessions
            .read()
            .unwrap()
            .iter()
            .filter(|(_, s)| self.is_stale(s, now))
            .map(|(id, _)| id.clone())
            .collect();
        for id in stale {
            self.expire(&id);
        }
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ApiError> {
        let now = Instant::now();
        let found = self.inner.sessions.read().unwrap().get(id).cloned();
        match found {
            Some(slot) if self.is_stale(&slot, now) => {
                self.expire(id);
                Err(ApiError::SessionFinished("session expired".into()))
            }
            Some(slot) => {
                *slot.last_active.lock().unwrap() = now;
                Ok(slot)
            }
            None if self.inner.expired.read().unwrap().contains(id) => {
                Err(ApiError::SessionFinished("session expired".into()))
            }
            None => Err(ApiError::UnknownSession(id.to_string())),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/cases", get(list_cases))
        .route("/chronics", get(list_chronics))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/observation", get(get_observation))
        .route("/sessions/{id}/action", post(post_action))
        .route("/sessions/{id}/simulate", post(simulate))
        .route("/sessions/{id}/reset", post(reset))
        .route("/sessions/{id}/suggest", post(suggest))
        .route("/sessions/{id}/layout", get(layout))
        .with_state(state)
}

/// Serves until the listener fails, sweeping idle sessions once a minute.
pub async fn serve(listener: tokio::net::TcpListener, config: ServiceConfig) -> std::io::Result<()> {
    let state = AppState::new(config);
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.sweep();
        }
    });
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::BadRequest(e.to_string()))
}

/// Frames worth replaying: the whole cascade if anything tripped or load
/// was cut, nothing otherwise.
fn replay(frames: &[CascadeFrame], load_was_cut: bool) -> Vec<CascadeFrame> {
    if load_was_cut || frames.iter().any(|f| !f.overflowed.is_empty()) {
        frames.to_vec()
    } else {
        Vec::new()
    }
}

async fn list_cases(State(state): State<AppState>) -> Json<Listing<CaseInfo>> {
    let items = state.inner.cases.get_or_init(|| {
        builtins::CASES
            .iter()
            .filter_map(|&name| {
                let g = builtins::grid(name)?;
                Some(CaseInfo {
                    name: name.to_string(),
                    substations: g.n_substations(),
                    branches: g.n_branches(),
                    generators: g.generators.len(),
                    loads: g.loads.len(),
                    topology_onehot_len: g.onehot_len(),
                })
            })
            .collect()
    });
    Json(Listing {
        schema_version: SCHEMA_VERSION,
        items: items.clone(),
    })
}

async fn list_chronics(State(state): State<AppState>) -> Json<Listing<ChronicInfo>> {
    let items = state.inner.chronics.get_or_init(|| {
        builtins::CHRONICS
            .iter()
            .filter_map(|&(name, case)| {
                let g = builtins::grid(case)?;
                let c = builtins::chronic(name, &g)?.ok()?;
                Some(ChronicInfo {
                    name: name.to_string(),
                    case: case.to_string(),
                    steps: c.len(),
                    interval: c.interval.clone(),
                })
            })
            .collect()
    });
    Json(Listing {
        schema_version: SCHEMA_VERSION,
        items: items.clone(),
    })
}

async fn create_session(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let req: CreateSession = parse_body(&body)?;
    state.sweep();
    let grid = builtins::grid(&req.case).ok_or_else(|| ApiError::UnknownCase(req.case.clone()))?;
    let chronic_name = match req.chronic {
        Some(c) => c,
        None => builtins::CHRONICS
            .iter()
            .find(|(_, case)| *case == req.case)
            .map(|(c, _)| c.to_string())
            .ok_or_else(|| ApiError::UnknownChronic(format!("no chronic for case {}", req.case)))?,
    };
    let owner = builtins::chronic_case(&chronic_name).ok_or_else(|| ApiError::UnknownChronic(chronic_name.clone()))?;
    if owner != req.case {
        return Err(ApiError::BadConfig(format!(
            "chronic {chronic_name} belongs to case {owner}, not {}",
            req.case
        )));
    }
    let config: EnvConfig = match req.config {
        Some(v) => serde_json::from_value(v).map_err(|e| ApiError::BadConfig(e.to_string()))?,
        None => EnvConfig::default(),
    };
    let mut chronic = builtins::chronic(&chronic_name, &grid)
        .expect("known chronic")
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let first = chronic
        .next()
        .ok_or_else(|| ApiError::BadConfig(format!("chronic {chronic_name} is empty")))?;
    let env = Environment::new(&grid, config, first)?;
    let observation = env.observe()?;

    let id = uuid::Uuid::new_v4().simple().to_string();
    let created = SessionCreated {
        schema_version: SCHEMA_VERSION,
        session_id: id.clone(),
        case: req.case.clone(),
        chronic: chronic_name,
        chronic_length: chronic.len(),
        step: env.step_index(),
        observation,
    };
    let session = Session {
        case: req.case,
        env,
        chronic,
        pending: None,
        finished: false,
        agent: req.agent.map(|spec| Mutex::new(spec.build())),
    };
    state.inner.sessions.write().unwrap().insert(
        id.clone(),
        Arc::new(Slot {
            session: tokio::sync::RwLock::new(session),
            last_active: Mutex::new(Instant::now()),
        }),
    );
    log::info!("session {id} created on {}", created.case);
    Ok((StatusCode::CREATED, Json(created)))
}

fn observation_response(id: &str, s: &Session) -> ObservationResponse {
    let observation = if s.env.is_done() || s.finished {
        None
    } else {
        s.env.observe().ok()
    };
    ObservationResponse {
        schema_version: SCHEMA_VERSION,
        session_id: id.to_string(),
        step: s.env.step_index(),
        done: s.env.is_done(),
        finished: s.finished,
        observation,
    }
}

async fn get_observation(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ObservationResponse>, ApiError> {
    let slot = state.slot(&id)?;
    let s = slot.session.read().await;
    Ok(Json(observation_response(&id, &s)))
}

fn ensure_playable(s: &Session) -> Result<(), ApiError> {
    if s.finished {
        return Err(ApiError::SessionFinished("the chronic is exhausted, reset to start over".into()));
    }
    if s.env.is_done() {
        return Err(ApiError::SessionFinished("game over, reset to continue".into()));
    }
    Ok(())
}

async fn post_action(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<ActionResponse>, ApiError> {
    let action: Action = parse_body(&body)?;
    let slot = state.slot(&id)?;
    let mut guard = slot.session.write().await;
    let s = &mut *guard;
    ensure_playable(s)?;
    let step = s.env.step_index();
    let next = s.chronic.peek().cloned();
    let out = s.env.step(&action, next.as_ref())?;
    // Only consume the injections once the step is accepted.
    s.chronic.next();
    if out.done {
        s.pending = next.clone();
    }
    s.finished = next.is_none();
    Ok(Json(ActionResponse {
        schema_version: SCHEMA_VERSION,
        step,
        reward: out.reward,
        observation: out.observation,
        done: out.done,
        finished: s.finished,
        cascade_frames: replay(&out.info.cascade_frames, out.info.load_was_cut),
        overflowed_after_action: out.info.overflowed_after_action,
    }))
}

async fn simulate(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SimulateResponse>, ApiError> {
    let action: Action = parse_body(&body)?;
    let slot = state.slot(&id)?;
    let s = slot.session.read().await;
    ensure_playable(&s)?;
    let sim = s.env.simulate_detailed(&action)?;
    Ok(Json(SimulateResponse {
        schema_version: SCHEMA_VERSION,
        reward: sim.reward,
        predicted_overflows: sim.cascade.initial_overflows().to_vec(),
        load_was_cut: sim.cascade.load_was_cut,
        cascade_frames: replay(&sim.cascade.frames, sim.cascade.load_was_cut),
    }))
}

/// After a game over, continues on the injections the failed step drew.
/// Otherwise starts the chronic over.
async fn reset(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<ObservationResponse>, ApiError> {
    let slot = state.slot(&id)?;
    let mut guard = slot.session.write().await;
    let s = &mut *guard;
    let injections = match s.pending.take() {
        Some(inj) if s.env.is_done() => inj,
        _ => {
            s.chronic.rewind();
            s.chronic
                .next()
                .ok_or_else(|| ApiError::Internal("empty chronic".into()))?
        }
    };
    s.env.reset(injections)?;
    s.finished = false;
    Ok(Json(observation_response(&id, s)))
}

async fn suggest(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SuggestResponse>, ApiError> {
    let slot = state.slot(&id)?;
    let s = slot.session.read().await;
    ensure_playable(&s)?;
    let agent = s
        .agent
        .as_ref()
        .ok_or_else(|| ApiError::BadConfig("the session was created without an agent".into()))?;
    let observation = s.env.observe()?;
    let mut agent = agent.lock().unwrap();
    let action = agent
        .act(&observation, s.env.grid(), Some(&s.env))
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(Json(SuggestResponse {
        schema_version: SCHEMA_VERSION,
        agent: agent.name().to_string(),
        action,
    }))
}

async fn layout(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<LayoutResponse>, ApiError> {
    let slot = state.slot(&id)?;
    let s = slot.session.read().await;
    let grid = s.env.grid();
    let branches = grid
        .branches
        .iter()
        .map(|b| (grid.substations[b.origin].id, grid.substations[b.extremity].id))
        .collect();
    Ok(Json(LayoutResponse {
        schema_version: SCHEMA_VERSION,
        layout: builtins::layout(&s.case, grid),
        branches,
    }))
}
