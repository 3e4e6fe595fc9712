use std::collections::BTreeMap;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use frugal_core::pool::{
    load_pool_from_manifest, parse_pool_csv, ItemId, Label, ManifestFile, Pool, Provenance,
};
use frugal_core::session::SessionStatus;
use frugal_core::RunConfig;

use crate::error::ApiError;
use crate::store::{AppState, SessionEntry};

/// Pool upload: the manifest format, with the CSV given either as a path on
/// the server (`csv`, relative paths resolve against the working directory)
/// or inline (`csv_data`).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolUpload {
    pub name: String,
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_data: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolCreated {
    pub pool_id: String,
    pub name: String,
    pub size: usize,
    pub d: usize,
    pub has_truths: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub pool_id: String,
    /// A run config; omitted fields take their defaults.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageUrls {
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplayItem {
    pub id: ItemId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_urls: Option<ImageUrls>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub display: Vec<DisplayItem>,
    pub iteration: usize,
    pub budget: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub id: ItemId,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsRequest {
    pub labels: Vec<LabelEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub iteration: usize,
    pub samp_pct: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    /// Size of the display just labeled.
    pub display_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelsResponse {
    pub next_display: Vec<DisplayItem>,
    pub metrics: Metrics,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusResponse {
    pub session_id: String,
    pub pool_id: String,
    #[serde(flatten)]
    pub status: SessionStatus,
    pub display: Vec<DisplayItem>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/pools", post(create_pool))
        .route("/pools/{pool_id}/items/{item_id}/{file}", get(item_image))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_status))
        .route("/sessions/{id}/labels", post(submit_labels))
        .route("/sessions/{id}/runlog", get(session_runlog))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn create_pool(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<(StatusCode, Json<PoolCreated>), ApiError> {
    let upload: PoolUpload = parse_body(&body)?;
    let pool = blocking(move || load_upload(upload)).await?;
    let created = PoolCreated {
        name: pool.provenance().name.clone(),
        size: pool.len(),
        d: pool.dim(),
        has_truths: pool.has_truths(),
        pool_id: state.register_pool(pool).id.clone(),
    };
    tracing::info!(pool_id = %created.pool_id, size = created.size, "pool registered");
    Ok((StatusCode::CREATED, Json(created)))
}

fn load_upload(upload: PoolUpload) -> Result<Pool, ApiError> {
    match (upload.csv, upload.csv_data) {
        (Some(csv), None) => {
            let manifest = ManifestFile {
                name: upload.name,
                d: upload.d,
                csv,
                images_dir: upload.images_dir,
            };
            Ok(load_pool_from_manifest(
                &manifest,
                std::path::Path::new("."),
            )?)
        }
        (None, Some(data)) => {
            let provenance = Provenance {
                name: upload.name,
                seed: None,
                source: "upload".to_string(),
            };
            Ok(parse_pool_csv(
                data.as_bytes(),
                upload.d,
                upload.images_dir.as_deref(),
                provenance,
            )?)
        }
        _ => Err(ApiError::bad_request(
            "exactly one of `csv` (path) or `csv_data` (inline) is required",
        )),
    }
}

fn display_items(pool_id: &str, pool: &Pool, ids: &[ItemId]) -> Vec<DisplayItem> {
    ids.iter()
        .filter_map(|&id| pool.get(id).ok())
        .map(|item| DisplayItem {
            id: item.id,
            image_urls: item.image_refs.as_ref().map(|_| ImageUrls {
                before: format!("/pools/{pool_id}/items/{}/before.png", item.id),
                after: format!("/pools/{pool_id}/items/{}/after.png", item.id),
            }),
            features: Some(item.features.clone()),
        })
        .collect()
}

async fn create_session(
    State(state): State<AppState>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let pool = state.pool(&req.pool_id)?;
    let config = match req.config {
        Some(v) => RunConfig::from_json(&v.to_string())?,
        None => RunConfig::default(),
    };
    if config.pool.is_some() {
        return Err(ApiError::bad_request(
            "config.pool is not accepted here; pass pool_id instead",
        ));
    }
    let created = blocking(move || {
        let (session_id, entry) = state.create_session(&pool, &config)?;
        let entry = entry.blocking_lock();
        let s = &entry.session;
        Ok(SessionCreated {
            display: display_items(&pool.id, s.train_pool(), s.pending_display()),
            iteration: s.iteration(),
            budget: s.budget().max_labels(),
            session_id,
        })
    })
    .await?;
    tracing::info!(session_id = %created.session_id, "session created");
    Ok((StatusCode::CREATED, Json(created)))
}

async fn submit_labels(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<LabelsResponse>, ApiError> {
    let req: LabelsRequest = parse_body(&body)?;
    let mut labels = BTreeMap::new();
    for e in &req.labels {
        if labels.insert(e.id, e.label).is_some() {
            return Err(ApiError::bad_request(format!("id {} labeled twice", e.id)));
        }
    }
    let entry = state.session(&id)?.lock_owned().await;
    let response = blocking(move || {
        let mut entry = entry;
        let SessionEntry {
            session, pool_id, ..
        } = &mut *entry;
        let record = session.submit_labels(&labels)?;
        let metrics = Metrics {
            iteration: record.iteration,
            samp_pct: record.samp_pct,
            eer: record.test_eer,
            reward: record.reward,
            display_size: record.display_size,
        };
        let response = LabelsResponse {
            next_display: display_items(pool_id, session.train_pool(), session.pending_display()),
            metrics,
            done: session.is_done(),
        };
        entry
            .checkpoint()
            .map_err(|e| ApiError::internal(format!("checkpoint failed: {e}")))?;
        Ok(response)
    })
    .await?;
    Ok(Json(response))
}

async fn session_status(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<StatusResponse>, ApiError> {
    let entry = state.session(&id)?;
    let entry = entry.lock().await;
    let s = &entry.session;
    Ok(Json(StatusResponse {
        session_id: id,
        pool_id: entry.pool_id.clone(),
        status: s.status(),
        display: display_items(&entry.pool_id, s.train_pool(), s.pending_display()),
    }))
}

async fn session_runlog(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<impl IntoResponse, ApiError> {
    let entry = state.session(&id)?;
    let body = entry.lock().await.session.log().to_jsonl();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body))
}

async fn item_image(
    State(state): State<AppState>,
    Path((pool_id, item_id, file)): Path<(String, String, String)>,
) -> Result<impl IntoResponse, ApiError> {
    let pool = state.pool(&pool_id)?;
    let item_id: ItemId = item_id
        .parse()
        .map_err(|_| ApiError::not_found("item", &item_id))?;
    let item = pool
        .pool
        .get(item_id)
        .map_err(|_| ApiError::not_found("item", &item_id.to_string()))?;
    let refs = item.image_refs.as_ref().ok_or_else(|| {
        ApiError::new(
            StatusCode::NOT_FOUND,
            format!("item {item_id} has no images"),
        )
    })?;
    let path = match file.as_str() {
        "before.png" => &refs.before,
        "after.png" => &refs.after,
        other => return Err(ApiError::not_found("image", other)),
    };
    let bytes = tokio::fs::read(path)
        .await
        .map_err(|e| ApiError::internal(format!("cannot read {}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes))
}
