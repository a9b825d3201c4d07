//! HTTP/1.1 JSON service over the parkwatch registry and detector.
//!
//! Authentication is a `parkwatch_session` cookie issued by `/api/login`.
//! Detection runs on demand: `POST /api/find-parking` starts one job per
//! block on that block's latest registered video, clients poll
//! `/api/jobs/{id}/events?since=n`, and `/api/suggestion` answers once the
//! caller's jobs are done.

mod error;
pub mod jobs;

use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::header::{COOKIE, SET_COOKIE};
use axum::http::request::Parts;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, FixedOffset, Utc};
use parkwatch_core::detection::DetectionConfig;
use parkwatch_core::store::{Registry, SESSION_DAYS};
use parkwatch_core::suggestion::{suggest_for_user, DEFAULT_LOOKAHEAD_MINUTES};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use error::ApiError;
use jobs::{JobState, JobTable};

pub const SESSION_COOKIE: &str = "parkwatch_session";

/// Service settings, loadable from the `--config` JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub detection: DetectionConfig,
    /// Schedule time zone as minutes east of UTC; -300 is EST.
    pub utc_offset_minutes: i32,
    pub lookahead_minutes: u16,
    /// Directory for per-job `events.jsonl` / `final.json`.
    pub jobs_dir: Option<PathBuf>,
    /// Static web UI served under `/`.
    pub static_dir: Option<PathBuf>,
    /// Base for relative video and slot-map paths (default: working directory).
    pub data_root: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            detection: DetectionConfig::default(),
            utc_offset_minutes: -300,
            lookahead_minutes: DEFAULT_LOOKAHEAD_MINUTES,
            jobs_dir: None,
            static_dir: None,
            data_root: None,
        }
    }
}

impl ServiceConfig {
    pub fn offset(&self) -> FixedOffset {
        FixedOffset::east_opt(self.utc_offset_minutes * 60).unwrap_or_else(parkwatch_core::suggestion::default_offset)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }
}

struct Inner {
    registry: Arc<Registry>,
    jobs: JobTable,
    config: ServiceConfig,
    clock: Clock,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn new(registry: Arc<Registry>, config: ServiceConfig, clock: Clock) -> Self {
        Self(Arc::new(Inner {
            registry,
            jobs: JobTable::default(),
            config,
            clock,
        }))
    }

    pub fn registry(&self) -> &Registry {
        &self.0.registry
    }

    pub fn jobs(&self) -> &JobTable {
        &self.0.jobs
    }

    fn persist(&self) -> Result<(), ApiError> {
        self.0.registry.persist().map_err(ApiError::from)
    }
}

/// JSON body extractor whose rejections use the error envelope.
pub struct ApiJson<T>(pub T);

impl<S: Send + Sync, T: DeserializeOwned> FromRequest<S> for ApiJson<T> {
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        Json::<T>::from_request(req, state)
            .await
            .map(|Json(v)| ApiJson(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

fn session_token(headers: &HeaderMap) -> Option<String> {
    headers
        .get_all(COOKIE)
        .iter()
        .filter_map(|v| v.to_str().ok())
        .flat_map(|v| v.split(';'))
        .filter_map(|pair| pair.trim().split_once('='))
        .find(|(name, _)| *name == SESSION_COOKIE)
        .map(|(_, value)| value.to_owned())
}

/// The caller's username, from a live session cookie.
pub struct AuthUser(pub String);

impl FromRequestParts<AppState> for AuthUser {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &AppState) -> Result<Self, Self::Rejection> {
        let token = session_token(&parts.headers).ok_or_else(ApiError::unauthenticated)?;
        state
            .registry()
            .validate_session(&token, state.0.clock.now())
            .map(AuthUser)
            .map_err(|_| ApiError::unauthenticated())
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Credentials {
    username: String,
    password: String,
}

async fn register(State(st): State<AppState>, ApiJson(c): ApiJson<Credentials>) -> Result<Response, ApiError> {
    let account = st.registry().create_user(&c.username, &c.password, st.0.clock.now())?;
    st.persist()?;
    Ok((StatusCode::CREATED, Json(json!({ "username": account.username }))).into_response())
}

async fn login(State(st): State<AppState>, ApiJson(c): ApiJson<Credentials>) -> Result<Response, ApiError> {
    let session = st
        .registry()
        .login(&c.username, &c.password, st.0.clock.now())
        .map_err(|_| ApiError::invalid_credentials())?;
    st.persist()?;
    let cookie = format!(
        "{SESSION_COOKIE}={}; HttpOnly; Path=/; Max-Age={}; SameSite=Lax",
        session.token,
        SESSION_DAYS * 24 * 3600
    );
    let mut resp = Json(json!({
        "username": session.username,
        "expires_at": session.expires_at,
    }))
    .into_response();
    resp.headers_mut()
        .insert(SET_COOKIE, HeaderValue::from_str(&cookie).expect("token is hex"));
    Ok(resp)
}

async fn logout(State(st): State<AppState>, headers: HeaderMap) -> Result<Response, ApiError> {
    if let Some(token) = session_token(&headers) {
        st.registry().logout(&token);
        st.persist()?;
    }
    let mut resp = StatusCode::NO_CONTENT.into_response();
    resp.headers_mut().insert(
        SET_COOKIE,
        HeaderValue::from_static("parkwatch_session=; HttpOnly; Path=/; Max-Age=0; SameSite=Lax"),
    );
    Ok(resp)
}

async fn classes(State(st): State<AppState>, _user: AuthUser) -> Response {
    Json(st.registry().classes()).into_response()
}

async fn blocks(State(st): State<AppState>, _user: AuthUser) -> Response {
    Json(st.registry().blocks()).into_response()
}

async fn get_schedule(State(st): State<AppState>, AuthUser(user): AuthUser) -> Result<Response, ApiError> {
    Ok(Json(st.registry().schedule(&user)?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleBody {
    selections: BTreeMap<String, bool>,
}

async fn put_schedule(
    State(st): State<AppState>,
    AuthUser(user): AuthUser,
    ApiJson(body): ApiJson<ScheduleBody>,
) -> Result<Response, ApiError> {
    st.registry().set_schedule(&user, &body.selections)?;
    st.persist()?;
    Ok(Json(st.registry().schedule(&user)?).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VideoBody {
    block_id: String,
    frames_path: String,
    reference_path: String,
}

async fn register_video(
    State(st): State<AppState>,
    _user: AuthUser,
    ApiJson(body): ApiJson<VideoBody>,
) -> Result<Response, ApiError> {
    let record = st.registry().register_video(
        &body.block_id,
        &body.frames_path,
        &body.reference_path,
        st.0.clock.now(),
    )?;
    st.persist()?;
    Ok((StatusCode::CREATED, Json(record)).into_response())
}

async fn list_videos(State(st): State<AppState>, _user: AuthUser) -> Response {
    Json(st.registry().videos()).into_response()
}

async fn find_parking(State(st): State<AppState>, AuthUser(user): AuthUser) -> Result<Response, ApiError> {
    let registry = st.registry();
    let records = registry
        .blocks()
        .iter()
        .map(|b| registry.latest_video(&b.block_id))
        .collect::<Result<Vec<_>, _>>()?;
    let batch = st.jobs().create_batch(&user, &records);
    let base = st.0.config.data_root.clone().unwrap_or_else(|| PathBuf::from("."));
    let listing: Vec<_> = batch
        .iter()
        .map(|j| json!({ "job_id": j.job_id, "block_id": j.block_id }))
        .collect();
    for (job, record) in batch.into_iter().zip(records) {
        let cfg = st.0.config.detection;
        let base = base.clone();
        let artifacts = st.0.config.jobs_dir.clone();
        tokio::task::spawn_blocking(move || jobs::run_job(&job, &record, &cfg, &base, artifacts.as_deref()));
    }
    Ok((StatusCode::ACCEPTED, Json(json!({ "jobs": listing }))).into_response())
}

async fn job_events(
    State(st): State<AppState>,
    _user: AuthUser,
    Path(job_id): Path<String>,
    query: Result<Query<HashMap<String, String>>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(params) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let since = match params.get("since") {
        Some(s) => s
            .parse::<usize>()
            .map_err(|_| ApiError::bad_request("since must be a non-negative integer"))?,
        None => 0,
    };
    let job = st.jobs().get(&job_id).ok_or_else(|| {
        ApiError::new(StatusCode::NOT_FOUND, "JobNotFound", format!("no job {job_id}")).with("job_id", job_id.clone())
    })?;
    Ok(Json(job.view(since)).into_response())
}

async fn suggestion(State(st): State<AppState>, AuthUser(user): AuthUser) -> Result<Response, ApiError> {
    let batch = st.jobs().latest_batch(&user).ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            "NoDetectionRun",
            "run find-parking before asking for a suggestion",
        )
    })?;
    let mut statuses = BTreeMap::new();
    for job in &batch {
        match job.state() {
            JobState::Done => {
                let status = job.final_status().expect("done jobs carry a final status");
                statuses.insert(job.block_id.clone(), status);
            }
            JobState::Failed => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "JobFailed",
                    format!("detection failed for block {}", job.block_id),
                )
                .with("block_id", job.block_id.clone())
                .with("job_id", job.job_id.clone()))
            }
            JobState::Pending | JobState::Running => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    "JobsPending",
                    "detection jobs are still running",
                ))
            }
        }
    }
    let cfg = &st.0.config;
    let s = suggest_for_user(
        st.registry(),
        &user,
        &statuses,
        st.0.clock.now(),
        cfg.offset(),
        cfg.lookahead_minutes,
    )?;
    Ok(Json(s).into_response())
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/register", post(register))
        .route("/login", post(login))
        .route("/logout", post(logout))
        .route("/classes", get(classes))
        .route("/blocks", get(blocks))
        .route("/schedule", get(get_schedule).put(put_schedule))
        .route("/videos", get(list_videos).post(register_video))
        .route("/find-parking", post(find_parking))
        .route("/jobs/{id}/events", get(job_events))
        .route("/suggestion", get(suggestion))
        .fallback(api_not_found);
    let app = Router::new().nest("/api", api);
    let app = match &state.0.config.static_dir {
        Some(dir) => app.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => app,
    };
    app.with_state(state)
}

/// Serves until `shutdown` resolves, then persists the store.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let registry = state.0.registry.clone();
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await?;
    registry
        .persist()
        .map_err(|e| std::io::Error::other(e.to_string()))
}
