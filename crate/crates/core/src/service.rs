//! HTTP session service that puts a human annotator in the labeling loop.
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create a session, returns the round-1 query |
//! | GET | `/sessions/{id}` | session state |
//! | GET | `/sessions/{id}/query` | pending batch |
//! | GET | `/sessions/{id}/samples/{sid}/image` | patch image bytes |
//! | POST | `/sessions/{id}/labels` | `{sid: "class:c" \| "non-target"}` |
//! | POST | `/sessions/{id}/advance` | train and produce the next query |
//! | GET | `/sessions/{id}/metrics` | completed round records |
//!
//! Every accepted mutation is appended to `<state_dir>/<id>.jsonl` before it
//! is applied; on startup the journals are replayed to rebuild sessions.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::data::{DataDir, LabelState};
use crate::error::Error;
use crate::orchestrator::{Experiment, ExperimentData, Labeler, OracleLabeler, QueryRoundRecord, Strategy};

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub config: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub patches: Option<PathBuf>,
    /// Directory of per-session journals; `None` disables persistence.
    pub state_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CreateSession {
    /// Config file path; defaults to the server's `--config`.
    #[serde(default)]
    pub config: Option<PathBuf>,
    /// Data directory; defaults to the server's `--data`.
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Config keys overriding the file, same names as in the file.
    #[serde(default)]
    pub overrides: Option<serde_json::Map<String, serde_json::Value>>,
    /// Auto-label each query from ground truth.
    #[serde(default)]
    pub oracle: bool,
    #[serde(default)]
    pub strategy: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum SessionState {
    AwaitingLabels { round: usize },
    Training { round: usize },
    Done,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleDescriptor {
    pub sample_id: String,
    pub image: Option<String>,
    pub label: Option<LabelState>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum JournalEvent {
    Create {
        config: Box<ExperimentConfig>,
        data: PathBuf,
        oracle: bool,
        strategy: Strategy,
    },
    Labels {
        labels: BTreeMap<String, LabelState>,
    },
    Advance,
}

struct SessionCore {
    experiment: Experiment,
    received: BTreeMap<usize, LabelState>,
    oracle: bool,
    journal: Option<File>,
}

/// Read-side snapshot, refreshed after every mutation.
#[derive(Debug, Clone)]
struct SessionView {
    state: SessionState,
    pending: Vec<(String, Option<String>)>,
    received: BTreeMap<String, LabelState>,
    history: Vec<QueryRoundRecord>,
}

struct Session {
    id: String,
    core: Arc<tokio::sync::Mutex<SessionCore>>,
    view: RwLock<SessionView>,
}

pub struct AppState {
    options: ServiceOptions,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl SessionCore {
    fn append(&mut self, event: &JournalEvent) -> Result<(), Error> {
        if let Some(f) = &mut self.journal {
            let mut line = serde_json::to_string(event).expect("journal event serializes");
            line.push('\n');
            f.write_all(line.as_bytes())
                .and_then(|_| f.sync_data())
                .map_err(|e| Error::io("session journal", e))?;
        }
        Ok(())
    }

    fn autofill(&mut self) -> Result<(), Error> {
        if !self.oracle {
            return Ok(());
        }
        if let Some(ids) = self.experiment.pending() {
            let data = Arc::clone(self.experiment.data());
            let records: Vec<_> = ids.iter().map(|&i| &data.pool.records[i]).collect();
            let mut oracle = OracleLabeler {
                id_count: data.id_count(),
            };
            let labels = oracle.label(&records)?;
            self.received = crate::data::resolve_labels(&data.pool, &labels)?;
        }
        Ok(())
    }

    fn view(&self) -> SessionView {
        let exp = &self.experiment;
        let data = exp.data();
        let state = if exp.is_done() {
            SessionState::Done
        } else {
            SessionState::AwaitingLabels {
                round: exp.current_round(),
            }
        };
        SessionView {
            state,
            pending: exp
                .pending()
                .unwrap_or(&[])
                .iter()
                .map(|&i| {
                    let r = &data.pool.records[i];
                    (r.sample_id.clone(), r.image_ref.clone())
                })
                .collect(),
            received: self
                .received
                .iter()
                .map(|(&i, &s)| (data.pool.records[i].sample_id.clone(), s))
                .collect(),
            history: exp
                .history()
                .iter()
                .map(|r| QueryRoundRecord {
                    wall_time: None,
                    ..r.clone()
                })
                .collect(),
        }
    }

    fn advance(&mut self) -> Result<(), Error> {
        self.experiment.complete_round(&self.received)?;
        self.received.clear();
        if !self.experiment.is_done() {
            self.experiment.next_query()?;
        }
        self.autofill()
    }
}

impl Session {
    fn descriptors(&self, view: &SessionView) -> Vec<SampleDescriptor> {
        view.pending
            .iter()
            .map(|(sid, image)| SampleDescriptor {
                sample_id: sid.clone(),
                image: image
                    .as_ref()
                    .map(|_| format!("/sessions/{}/samples/{sid}/image", self.id)),
                label: view.received.get(sid).copied(),
            })
            .collect()
    }

    fn query_body(&self) -> serde_json::Value {
        let view = self.view.read().unwrap();
        let round = match view.state {
            SessionState::AwaitingLabels { round } | SessionState::Training { round } => Some(round),
            SessionState::Done => None,
        };
        json!({
            "session_id": self.id,
            "state": view.state,
            "round": round,
            "query": self.descriptors(&view),
            "remaining": view.pending.len() - view.received.len(),
        })
    }
}

fn config_error(e: Error) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, e.to_string())
}

impl AppState {
    pub fn new(options: ServiceOptions) -> Self {
        Self {
            options,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    /// Replays every journal found in the state directory.
    pub fn recover(&self) -> Result<usize, Error> {
        let Some(dir) = &self.options.state_dir else {
            return Ok(0);
        };
        if !dir.exists() {
            return Ok(0);
        }
        let mut restored = 0;
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        entries.sort();
        for path in entries {
            match self.replay(&path) {
                Ok(()) => restored += 1,
                Err(e) => warn!("could not restore session from {}: {e}", path.display()),
            }
        }
        Ok(restored)
    }

    fn replay(&self, path: &Path) -> Result<(), Error> {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Consistency(format!("bad journal name {}", path.display())))?
            .to_string();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut core: Option<SessionCore> = None;
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let event: JournalEvent = serde_json::from_str(&line)
                .map_err(|e| Error::ingestion(path, format!("line {}", n + 1), e.to_string()))?;
            match (event, core.as_mut()) {
                (
                    JournalEvent::Create {
                        config,
                        data,
                        oracle,
                        strategy,
                    },
                    None,
                ) => {
                    core = Some(build_core(*config, &data, oracle, strategy)?);
                }
                (JournalEvent::Labels { labels }, Some(c)) => {
                    let resolved = crate::data::resolve_labels(&c.experiment.data().pool, &labels)?;
                    c.received.extend(resolved);
                }
                (JournalEvent::Advance, Some(c)) => c.advance()?,
                _ => {
                    return Err(Error::ingestion(
                        path,
                        format!("line {}", n + 1),
                        "event out of order",
                    ));
                }
            }
        }
        let mut core = core.ok_or_else(|| Error::ingestion(path, "line 1", "empty journal"))?;
        core.journal = Some(
            OpenOptions::new()
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?,
        );
        self.insert(id, core);
        Ok(())
    }

    fn insert(&self, id: String, core: SessionCore) -> Arc<Session> {
        let view = core.view();
        let session = Arc::new(Session {
            id: id.clone(),
            core: Arc::new(tokio::sync::Mutex::new(core)),
            view: RwLock::new(view),
        });
        self.sessions.write().unwrap().insert(id, Arc::clone(&session));
        session
    }

    fn session(&self, id: &str) -> ApiResult<Arc<Session>> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }

    fn create(&self, req: CreateSession) -> ApiResult<Arc<Session>> {
        let config_path = req
            .config
            .or_else(|| self.options.config.clone())
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "no config given and no server default"))?;
        let mut config = ExperimentConfig::from_file(&config_path).map_err(config_error)?;
        if let Some(overrides) = req.overrides {
            let table = toml::Table::try_from(serde_json::Value::Object(overrides))
                .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("overrides: {e}")))?;
            config = config.with_overrides(&table).map_err(config_error)?;
        }
        let strategy = match req.strategy.as_deref() {
            None => Strategy::Openpath,
            Some(s) => s.parse().map_err(config_error)?,
        };
        let data = req.data.or_else(|| self.options.data.clone()).ok_or_else(|| {
            ApiError::new(
                StatusCode::CONFLICT,
                "no data directory given and no server default",
            )
        })?;
        let core = build_core(config.clone(), &data, req.oracle, strategy).map_err(|e| match e {
            Error::Config(_) | Error::Parameter(_) => config_error(e),
            other => ApiError::new(StatusCode::CONFLICT, format!("data unavailable: {other}")),
        })?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut core = core;
        if let Some(dir) = &self.options.state_dir {
            fs::create_dir_all(dir)
                .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
            let path = dir.join(format!("{id}.jsonl"));
            core.journal = Some(
                File::create(&path)
                    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?,
            );
            core.append(&JournalEvent::Create {
                config: Box::new(config),
                data: data.clone(),
                oracle: req.oracle,
                strategy,
            })
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
        }
        info!("created session {id} on {}", data.display());
        Ok(self.insert(id, core))
    }
}

fn build_core(
    config: ExperimentConfig,
    data: &Path,
    oracle: bool,
    strategy: Strategy,
) -> Result<SessionCore, Error> {
    let data = ExperimentData::load(&DataDir::new(data), &config.catalog)?;
    if config.budget_L > data.pool.len() {
        return Err(Error::Config(vec![format!(
            "budget_L: {} exceeds the pool size {}",
            config.budget_L,
            data.pool.len()
        )]));
    }
    let mut experiment = Experiment::new(config, strategy, Arc::new(data))?;
    experiment.next_query()?;
    let mut core = SessionCore {
        experiment,
        received: BTreeMap::new(),
        oracle,
        journal: None,
    };
    core.autofill()?;
    Ok(core)
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    body: Option<Json<CreateSession>>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let req = body.map(|Json(b)| b).unwrap_or_default();
    let app2 = Arc::clone(&app);
    let session = tokio::task::spawn_blocking(move || app2.create(req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((StatusCode::CREATED, Json(session.query_body())))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let view = s.view.read().unwrap();
    Ok(Json(json!({
        "session_id": s.id,
        "state": view.state,
        "completed_rounds": view.history.len(),
    })))
}

async fn get_query(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<serde_json::Value>> {
    Ok(Json(app.session(&id)?.query_body()))
}

async fn get_metrics(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let view = s.view.read().unwrap();
    Ok(Json(json!({ "session_id": s.id, "rounds": view.history })))
}

fn content_type(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("tif" | "tiff") => "image/tiff",
        Some("bmp") => "image/bmp",
        Some("webp") => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn get_image(
    State(app): State<Arc<AppState>>,
    UrlPath((id, sid)): UrlPath<(String, String)>,
) -> ApiResult<Response> {
    let s = app.session(&id)?;
    let image_ref = {
        let core = s.core.lock().await;
        let data = core.experiment.data();
        let i = data
            .pool
            .index_of(&sid)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown sample {sid}")))?;
        data.pool.records[i].image_ref.clone()
    };
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("no image for sample {sid}"));
    let image_ref = image_ref.ok_or_else(not_found)?;
    let root = app.options.patches.as_ref().ok_or_else(not_found)?;
    let rel = Path::new(&image_ref);
    if rel
        .components()
        .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir))
    {
        return Err(not_found());
    }
    let path = root.join(rel);
    let bytes = tokio::fs::read(&path).await.map_err(|_| not_found())?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}

async fn post_labels(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<BTreeMap<String, String>>,
) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let mut core = s.core.lock().await;
    if core.experiment.is_done() {
        return Err(ApiError::new(StatusCode::CONFLICT, "session is done"));
    }
    let data = Arc::clone(core.experiment.data());
    let id_count = data.id_count();
    let pending: Vec<usize> = core.experiment.pending().unwrap_or(&[]).to_vec();
    let mut parsed = BTreeMap::new();
    let mut by_index = BTreeMap::new();
    for (sid, value) in &body {
        let i = data
            .pool
            .index_of(sid)
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown sample {sid}")))?;
        let state: LabelState = value
            .parse()
            .ok()
            .filter(|s| match s {
                LabelState::Id(c) => *c < id_count,
                LabelState::NonTarget => true,
                LabelState::Unlabeled => false,
            })
            .ok_or_else(|| {
                ApiError::new(
                    StatusCode::UNPROCESSABLE_ENTITY,
                    format!(
                        "{sid}: label {value:?} must be \"class:c\" with c < {id_count} or \"non-target\""
                    ),
                )
            })?;
        if !pending.contains(&i) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("{sid} is not in the pending query"),
            ));
        }
        if core.received.contains_key(&i) {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                format!("{sid} is already labeled"),
            ));
        }
        parsed.insert(sid.clone(), state);
        by_index.insert(i, state);
    }
    core.append(&JournalEvent::Labels { labels: parsed })
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    core.received.extend(by_index);
    let remaining = pending.len() - core.received.len();
    *s.view.write().unwrap() = core.view();
    Ok(Json(json!({ "remaining": remaining })))
}

async fn post_advance(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let s = app.session(&id)?;
    let mut core = Arc::clone(&s.core).lock_owned().await;
    if core.experiment.is_done() {
        return Err(ApiError::new(StatusCode::CONFLICT, "session is done"));
    }
    let pending = core.experiment.pending().map_or(0, <[usize]>::len);
    if core.received.len() < pending {
        return Err(ApiError::new(
            StatusCode::CONFLICT,
            format!(
                "{} of {pending} pending samples are unlabeled",
                pending - core.received.len()
            ),
        ));
    }
    core.append(&JournalEvent::Advance)
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    s.view.write().unwrap().state = SessionState::Training {
        round: core.experiment.current_round(),
    };
    let (core, outcome) = tokio::task::spawn_blocking(move || {
        let r = core.advance();
        (core, r)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    *s.view.write().unwrap() = core.view();
    outcome.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let done = core.experiment.is_done();
    drop(core);
    let mut body = s.query_body();
    if done {
        let view = s.view.read().unwrap();
        body["report"] = json!({ "rounds": view.history });
    }
    Ok(Json(body))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/query", get(get_query))
        .route("/sessions/{id}/samples/{sid}/image", get(get_image))
        .route("/sessions/{id}/labels", post(post_labels))
        .route("/sessions/{id}/advance", post(post_advance))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .with_state(state)
}

/// Restores journaled sessions and serves until the process is stopped.
pub async fn serve(options: ServiceOptions, port: u16) -> Result<(), Error> {
    let state = Arc::new(AppState::new(options));
    let restored = state.recover()?;
    if restored > 0 {
        info!("restored {restored} sessions");
    }
    let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| Error::io(format!("127.0.0.1:{port}"), e))?;
    info!("listening on http://{addr}");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| Error::io("http server", e))
}
