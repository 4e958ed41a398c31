//! HTTP API over review projects.
//!
//! Every project sits behind one mutex, so writes to a project are
//! serialized and each read sees a consistent state.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{CoverageDecision, Project, QualityLabel, ReviewError, SessionSpec};

pub const TOKEN_HEADER: &str = "x-project-token";

#[derive(Clone)]
pub struct AppState {
    projects: Arc<BTreeMap<String, Arc<Mutex<Project>>>>,
}

impl AppState {
    pub fn new(projects: impl IntoIterator<Item = (String, Project)>) -> Self {
        AppState {
            projects: Arc::new(
                projects
                    .into_iter()
                    .map(|(k, p)| (k, Arc::new(Mutex::new(p))))
                    .collect(),
            ),
        }
    }

    /// Runs `f` on a project after checking its token.
    fn with<T>(
        &self,
        name: &str,
        headers: &HeaderMap,
        f: impl FnOnce(&mut Project) -> Result<T, ReviewError>,
    ) -> Result<T, ApiError> {
        let p = self
            .projects
            .get(name)
            .ok_or_else(|| ReviewError::UnknownProject(name.to_string()))?;
        let mut guard = p.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(token) = &guard.config.token {
            let sent = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
            if sent != Some(token.as_str()) {
                return Err(ApiError::Unauthorized);
            }
        }
        Ok(f(&mut guard)?)
    }
}

#[derive(Debug)]
pub enum ApiError {
    Review(ReviewError),
    BadBody(String),
    Unauthorized,
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        ApiError::Review(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadBody(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, kind, message) = match self {
            ApiError::Unauthorized => (
                StatusCode::UNAUTHORIZED,
                "unauthorized",
                format!("missing or wrong {TOKEN_HEADER}"),
            ),
            ApiError::BadBody(m) => (StatusCode::BAD_REQUEST, "bad_body", m),
            ApiError::Review(e) => {
                use ReviewError as E;
                let status = match &e {
                    E::UnknownProject(_) | E::UnknownSession(_) | E::UnknownRound(_) => {
                        StatusCode::NOT_FOUND
                    }
                    E::RoundIncomplete { .. }
                    | E::DuplicateSession(_)
                    | E::ConsensusWithoutPriors { .. } => StatusCode::CONFLICT,
                    E::Io(_) | E::Journal(_) | E::Gateway(_) | E::Project(_) => {
                        StatusCode::INTERNAL_SERVER_ERROR
                    }
                    _ => StatusCode::BAD_REQUEST,
                };
                (status, e.kind(), e.to_string())
            }
        };
        (status, Json(json!({ "error": kind, "message": message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
struct ReviewerQuery {
    reviewer: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RoundQuery {
    round: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    session: Option<String>,
}

#[derive(Debug, Serialize)]
struct ProjectSummary {
    name: String,
    merged_codes: usize,
    coder_ids: Vec<String>,
    sessions: Vec<String>,
}

async fn list_projects(State(st): State<AppState>, headers: HeaderMap) -> ApiResult<Vec<ProjectSummary>> {
    let mut out = Vec::new();
    for name in st.projects.keys() {
        if let Ok(s) = st.with(name, &headers, |p| {
            Ok(ProjectSummary {
                name: name.clone(),
                merged_codes: p.merged.merged.len(),
                coder_ids: p.merged.coder_ids.clone(),
                sessions: p.store.sessions().map(|s| s.id.clone()).collect(),
            })
        }) {
            out.push(s);
        }
    }
    Ok(Json(out))
}

async fn list_sessions(
    State(st): State<AppState>,
    Path(p): Path<String>,
    headers: HeaderMap,
) -> ApiResult<Vec<super::ReviewSession>> {
    st.with(&p, &headers, |p| Ok(p.store.sessions().cloned().collect()))
        .map(Json)
}

async fn create_session(
    State(st): State<AppState>,
    Path(p): Path<String>,
    headers: HeaderMap,
    body: Result<Json<SessionSpec>, JsonRejection>,
) -> Result<(StatusCode, Json<super::ReviewSession>), ApiError> {
    let Json(spec) = body?;
    let s = st.with(&p, &headers, |p| p.create_session(&spec))?;
    Ok((StatusCode::CREATED, Json(s)))
}

async fn get_session(
    State(st): State<AppState>,
    Path((p, s)): Path<(String, String)>,
    headers: HeaderMap,
) -> ApiResult<super::ReviewSession> {
    st.with(&p, &headers, |p| p.store.session(&s).cloned()).map(Json)
}

async fn items(
    State(st): State<AppState>,
    Path((p, s)): Path<(String, String)>,
    Query(q): Query<ReviewerQuery>,
    headers: HeaderMap,
) -> ApiResult<Vec<super::ReviewItem>> {
    st.with(&p, &headers, |p| p.items(&s, q.reviewer.as_deref()))
        .map(Json)
}

async fn record_decision(
    State(st): State<AppState>,
    Path((p, s)): Path<(String, String)>,
    headers: HeaderMap,
    body: Result<Json<CoverageDecision>, JsonRejection>,
) -> ApiResult<CoverageDecision> {
    let Json(d) = body?;
    st.with(&p, &headers, |p| p.record_decision(&s, d)).map(Json)
}

async fn discrepancies(
    State(st): State<AppState>,
    Path((p, s)): Path<(String, String)>,
    Query(q): Query<RoundQuery>,
    headers: HeaderMap,
) -> ApiResult<Vec<super::Discrepancy>> {
    let round = q
        .round
        .ok_or_else(|| ReviewError::Invalid("discrepancies need ?round=".into()))?;
    st.with(&p, &headers, |p| p.list_discrepancies(&s, round))
        .map(Json)
}

async fn label(
    State(st): State<AppState>,
    Path((p, s)): Path<(String, String)>,
    headers: HeaderMap,
    body: Result<Json<serde_json::Value>, JsonRejection>,
) -> ApiResult<QualityLabel> {
    let Json(v) = body?;
    // decode by hand so an unknown dimension is reported like a bad value
    let l: QualityLabel =
        serde_json::from_value(v).map_err(|e| ReviewError::IllegalValue(e.to_string()))?;
    st.with(&p, &headers, |p| p.label_quality(&s, l)).map(Json)
}

async fn kappa(
    State(st): State<AppState>,
    Path((p, s)): Path<(String, String)>,
    Query(q): Query<RoundQuery>,
    headers: HeaderMap,
) -> ApiResult<Vec<super::PairKappa>> {
    st.with(&p, &headers, |p| p.kappa(&s, q.round)).map(Json)
}

async fn report(
    State(st): State<AppState>,
    Path((p, table)): Path<(String, String)>,
    Query(q): Query<SessionQuery>,
    headers: HeaderMap,
) -> ApiResult<super::ReportResponse> {
    let n: u8 = table
        .strip_prefix("table")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| ReviewError::Invalid(format!("unknown report {table:?}")))?;
    st.with(&p, &headers, |p| p.report(n, q.session.as_deref()))
        .map(Json)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/projects", get(list_projects))
        .route("/projects/:p/sessions", get(list_sessions).post(create_session))
        .route("/projects/:p/sessions/:s", get(get_session))
        .route("/projects/:p/sessions/:s/items", get(items))
        .route("/projects/:p/sessions/:s/decisions", post(record_decision))
        .route("/projects/:p/sessions/:s/discrepancies", get(discrepancies))
        .route("/projects/:p/sessions/:s/labels", post(label))
        .route("/projects/:p/sessions/:s/kappa", get(kappa))
        .route("/projects/:p/reports/:table", get(report))
        .with_state(state)
}

/// Serves the API until the process is stopped.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review API listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
