use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::model::{aggregate_ratings, MethodMean, PostView, Rating, ReviewData, ReviewMethod};
use crate::session::{blind, sample_session};
use crate::store::RatingLog;
use crate::ReviewError;

pub const SCHEMA_VERSION: u32 = 1;

pub struct AppState {
    pub data: ReviewData,
    pub log: RatingLog,
    /// Blinding seed used when a request names no session.
    pub default_seed: u64,
}

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let status = match &self {
            ReviewError::Validation(_) => StatusCode::BAD_REQUEST,
            ReviewError::NotFound(_) => StatusCode::NOT_FOUND,
            ReviewError::Io(_) | ReviewError::Data(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({"schema_version": SCHEMA_VERSION, "error": self.to_string()}))).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct PageQuery {
    #[serde(default)]
    page: usize,
    #[serde(default = "default_per_page")]
    per_page: usize,
}

fn default_per_page() -> usize {
    20
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterListing {
    pub cluster_id: usize,
    pub rank: usize,
    pub member_count: usize,
    pub summary_count: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterPage {
    pub schema_version: u32,
    pub page: usize,
    pub per_page: usize,
    pub total: usize,
    pub clusters: Vec<ClusterListing>,
}

async fn list_clusters(State(st): State<Arc<AppState>>, Query(q): Query<PageQuery>) -> Result<Json<ClusterPage>, ReviewError> {
    if q.per_page == 0 || q.per_page > 500 {
        return Err(ReviewError::Validation("per_page must be 1..500".into()));
    }
    let clusters = st
        .data
        .clusters()
        .iter()
        .skip(q.page.saturating_mul(q.per_page))
        .take(q.per_page)
        .map(|c| ClusterListing {
            cluster_id: c.cluster_id,
            rank: c.rank,
            member_count: c.members.len(),
            summary_count: c.summaries.len(),
        })
        .collect();
    Ok(Json(ClusterPage {
        schema_version: SCHEMA_VERSION,
        page: q.page,
        per_page: q.per_page,
        total: st.data.len(),
        clusters,
    }))
}

#[derive(Debug, Deserialize)]
struct SessionQuery {
    session: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BlindedSummary {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ClusterDetail {
    pub schema_version: u32,
    pub cluster_id: usize,
    pub rank: usize,
    pub members: Vec<PostView>,
    pub summaries: Vec<BlindedSummary>,
}

async fn get_cluster(
    State(st): State<Arc<AppState>>,
    Path(id): Path<usize>,
    Query(q): Query<SessionQuery>,
) -> Result<Json<ClusterDetail>, ReviewError> {
    let c = st.data.get(id).ok_or(ReviewError::NotFound(format!("cluster {id}")))?;
    let labels = blind(q.session.unwrap_or(st.default_seed), id, &c.methods());
    let summaries = labels
        .iter()
        .map(|(label, m)| BlindedSummary {
            label: label.clone(),
            text: c
                .summaries
                .iter()
                .find(|s| s.method == *m)
                .map(|s| s.text.clone())
                .unwrap_or_default(),
        })
        .collect();
    Ok(Json(ClusterDetail {
        schema_version: SCHEMA_VERSION,
        cluster_id: c.cluster_id,
        rank: c.rank,
        members: c.members.clone(),
        summaries,
    }))
}

async fn reveal_cluster(
    State(st): State<Arc<AppState>>,
    Path(id): Path<usize>,
    Query(q): Query<SessionQuery>,
) -> Result<Json<serde_json::Value>, ReviewError> {
    let c = st.data.get(id).ok_or(ReviewError::NotFound(format!("cluster {id}")))?;
    let labels = blind(q.session.unwrap_or(st.default_seed), id, &c.methods());
    Ok(Json(json!({"schema_version": SCHEMA_VERSION, "cluster_id": id, "labels": labels})))
}

/// A rating names its summary either by method or by a blinded label.
#[derive(Debug, Serialize, Deserialize)]
pub struct RatingRequest {
    pub cluster_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<ReviewMethod>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<u64>,
    pub score: i64,
    pub rater_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<i64>,
    #[serde(default)]
    pub flagged: bool,
}

fn now_utc_seconds() -> i64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}

/// Checks a request against the served data and resolves blinded labels.
pub fn resolve_rating(st: &AppState, req: RatingRequest) -> Result<Rating, ReviewError> {
    let c = st
        .data
        .get(req.cluster_id)
        .ok_or(ReviewError::NotFound(format!("cluster {}", req.cluster_id)))?;
    let method = match (req.method, req.label.as_deref()) {
        (Some(m), None) => m,
        (None, Some(label)) => *blind(req.session.unwrap_or(st.default_seed), c.cluster_id, &c.methods())
            .get(label)
            .ok_or_else(|| ReviewError::Validation(format!("no summary labelled {label:?}")))?,
        _ => return Err(ReviewError::Validation("give exactly one of method or label".into())),
    };
    if !c.methods().contains(&method) {
        return Err(ReviewError::Validation(format!("cluster {} has no {method:?} summary", c.cluster_id)));
    }
    let score = u8::try_from(req.score)
        .ok()
        .filter(|s| (1..=5).contains(s))
        .ok_or_else(|| ReviewError::Validation(format!("score must be 1..5, got {}", req.score)))?;
    let rating = Rating {
        cluster_id: c.cluster_id,
        method,
        score,
        rater_id: req.rater_id,
        timestamp: req.timestamp.unwrap_or_else(now_utc_seconds),
        flagged: req.flagged,
    };
    rating.validate()?;
    Ok(rating)
}

async fn post_rating(
    State(st): State<Arc<AppState>>,
    body: Result<Json<RatingRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ReviewError> {
    let Json(req) = body.map_err(|e| ReviewError::Validation(e.body_text()))?;
    let rating = resolve_rating(&st, req)?;
    let st2 = st.clone();
    let r2 = rating.clone();
    tokio::task::spawn_blocking(move || st2.log.append(&r2))
        .await
        .map_err(|e| ReviewError::Data(e.to_string()))??;
    Ok((
        StatusCode::CREATED,
        Json(json!({"schema_version": SCHEMA_VERSION, "cluster_id": rating.cluster_id, "score": rating.score})),
    ))
}

async fn export_ratings(State(st): State<Arc<AppState>>) -> Result<Response, ReviewError> {
    let raw = st.log.export()?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-ndjson".to_string()),
            (header::HeaderName::from_static("x-schema-version"), SCHEMA_VERSION.to_string()),
        ],
        raw,
    )
        .into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AggregateResponse {
    pub schema_version: u32,
    pub methods: Vec<MethodMean>,
}

async fn aggregate(State(st): State<Arc<AppState>>) -> Result<Json<AggregateResponse>, ReviewError> {
    Ok(Json(AggregateResponse {
        schema_version: SCHEMA_VERSION,
        methods: aggregate_ratings(&st.log.read_all()?),
    }))
}

#[derive(Debug, Deserialize)]
struct SampleQuery {
    k: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionResponse {
    pub schema_version: u32,
    pub seed: u64,
    pub cluster_ids: Vec<usize>,
    /// Blinded labels per cluster; method names are withheld.
    pub labels: BTreeMap<usize, Vec<String>>,
}

async fn session(
    State(st): State<Arc<AppState>>,
    Path(seed): Path<u64>,
    Query(q): Query<SampleQuery>,
) -> Result<Json<SessionResponse>, ReviewError> {
    let k = q.k.unwrap_or(50.min(st.data.len()));
    let s = sample_session(&st.data, k, seed)?;
    Ok(Json(SessionResponse {
        schema_version: SCHEMA_VERSION,
        seed,
        labels: s.blinding.iter().map(|(c, m)| (*c, m.keys().cloned().collect())).collect(),
        cluster_ids: s.cluster_ids,
    }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/clusters", get(list_clusters))
        .route("/api/clusters/{id}", get(get_cluster))
        .route("/api/clusters/{id}/reveal", get(reveal_cluster))
        .route("/api/ratings", axum::routing::post(post_rating))
        .route("/api/export/ratings", get(export_ratings))
        .route("/api/aggregate", get(aggregate))
        .route("/api/sessions/{seed}", get(session))
        .with_state(state)
}

/// Serves the API until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> Result<(), ReviewError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "review service listening");
    axum::serve(listener, router(state)).await?;
    Ok(())
}
