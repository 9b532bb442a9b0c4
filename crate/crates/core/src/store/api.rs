//! HTTP JSON API over the store and the analysis pipeline.
//!
//! - `POST /api/v1/samples` ingest one sample (browser client)
//! - `GET  /api/v1/samples?household=&path=&from=&to=`
//! - `GET  /api/v1/analysis/vantage?household=`
//! - `GET  /api/v1/analysis/tiers`
//! - `GET  /api/v1/health`

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;
use tracing::info;

use super::{QueryFilter, Store};
use crate::analysis::{analyze_samples, AnalysisParams, CoincidentWindow, TierSummary, VantageStats};
use crate::error::Error;
use crate::sample::{rfc3339, ThroughputSample};

#[derive(Clone)]
pub struct ApiState {
    pub store: Arc<Store>,
    pub params: AnalysisParams,
    /// Static bearer token required for ingest when set.
    pub token: Option<String>,
    /// Directory served at `/` (the browser client assets).
    pub static_dir: Option<PathBuf>,
}

impl ApiState {
    pub fn new(store: Arc<Store>) -> Self {
        ApiState {
            store,
            params: AnalysisParams::default(),
            token: None,
            static_dir: None,
        }
    }
}

pub fn api_router(state: ApiState) -> Router {
    let static_dir = state.static_dir.clone();
    let router = Router::new()
        .route("/api/v1/health", get(health))
        .route("/api/v1/samples", get(list_samples).post(ingest_sample))
        .route("/api/v1/analysis/vantage", get(vantage))
        .route("/api/v1/analysis/tiers", get(tiers))
        .with_state(Arc::new(state));
    match static_dir {
        Some(dir) => router.fallback_service(ServeDir::new(dir)),
        None => router,
    }
}

struct ApiError(StatusCode, String);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Validation(_) | Error::Import { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::InvalidArgument(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn health(State(st): State<Arc<ApiState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "records": st.store.len() }))
}

async fn ingest_sample(
    State(st): State<Arc<ApiState>>,
    headers: HeaderMap,
    body: Result<Json<ThroughputSample>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    if let Some(token) = &st.token {
        let presented = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return Err(ApiError(StatusCode::UNAUTHORIZED, "missing or wrong bearer token".into()));
        }
    }
    let Json(sample) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let store = st.store.clone();
    let household = sample.household_id.clone();
    let path = sample.path;
    let id = tokio::task::spawn_blocking(move || store.append_sample(sample))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    info!(record_id = id, household = %household, path = %path, "sample ingested");
    Ok((StatusCode::CREATED, Json(json!({ "record_id": id }))))
}

#[derive(Debug, Default, Deserialize)]
struct SampleQuery {
    household: Option<String>,
    path: Option<String>,
    from: Option<String>,
    to: Option<String>,
}

impl SampleQuery {
    fn to_filter(&self) -> Result<QueryFilter, Error> {
        let ts = |v: &Option<String>| {
            v.as_deref()
                .filter(|s| !s.is_empty())
                .map(|s| rfc3339::parse(s).map_err(|e| Error::invalid(format!("bad timestamp {s:?}: {e}"))))
                .transpose()
        };
        Ok(QueryFilter {
            household_id: self.household.clone().filter(|s| !s.is_empty()),
            path: self.path.as_deref().filter(|s| !s.is_empty()).map(str::parse).transpose()?,
            from_utc: ts(&self.from)?,
            to_utc: ts(&self.to)?,
        })
    }
}

async fn list_samples(
    State(st): State<Arc<ApiState>>,
    Query(q): Query<SampleQuery>,
) -> ApiResult<Json<Vec<super::SampleRecord>>> {
    let filter = q.to_filter()?;
    Ok(Json(st.store.query_samples(&filter)?))
}

/// Latest coincident window of a household, for a live status badge.
#[derive(Debug, Serialize, Deserialize)]
pub struct HouseholdStatus {
    pub household_id: String,
    pub coincident_windows: usize,
    pub latest_window: Option<CoincidentWindow>,
    #[serde(serialize_with = "ser_instants")]
    pub splits: Vec<chrono::DateTime<chrono::Utc>>,
}

fn ser_instants<S: serde::Serializer>(v: &[chrono::DateTime<chrono::Utc>], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(rfc3339::format))
}

#[derive(Debug, Serialize)]
struct VantageResponse {
    vantage_points: Vec<VantageStats>,
    households: Vec<HouseholdStatus>,
}

async fn vantage(
    State(st): State<Arc<ApiState>>,
    Query(q): Query<SampleQuery>,
) -> ApiResult<Json<VantageResponse>> {
    let filter = QueryFilter {
        household_id: q.household.filter(|s| !s.is_empty()),
        ..Default::default()
    };
    let st2 = st.clone();
    let analysis = tokio::task::spawn_blocking(move || {
        let samples: Vec<ThroughputSample> =
            st2.store.query_samples(&filter)?.iter().map(|r| r.sample()).collect();
        analyze_samples(&samples, &st2.params)
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;

    let households = analysis
        .households
        .into_iter()
        .map(|h| HouseholdStatus {
            coincident_windows: h.windows.len(),
            latest_window: h.windows.last().cloned(),
            household_id: h.household_id,
            splits: h.splits,
        })
        .collect();
    Ok(Json(VantageResponse { vantage_points: analysis.stats, households }))
}

async fn tiers(State(st): State<Arc<ApiState>>) -> ApiResult<Json<Vec<TierSummary>>> {
    let st2 = st.clone();
    let analysis = tokio::task::spawn_blocking(move || analyze_samples(&st2.store.all_samples(), &st2.params))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(analysis.tier_summaries()))
}
