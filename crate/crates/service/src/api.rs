//! HTTP API: inference, food metadata, health and the meal diary.

use std::future::IntoFuture;
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use base64::Engine as _;
use chrono::{DateTime, NaiveDate, Utc};
use myfood_core::dataset::{ClassId, ClassTaxonomy, Dataset};
use myfood_core::modelhub::{image_digest, PredictionOutput, PredictorHandle};
use myfood_core::nutrition::{
    estimate_meal, read_calibration, read_nutrition_table, AreaCalibration, MealEstimate, NutritionTable, Nutrients,
};
use myfood_core::Error;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::config::ServiceConfig;
use crate::diary::{daily_totals, DailyTotal, DiaryEntry, DiaryStore, EditRequest};
use crate::models::load_predictor;
use crate::rle::{encode_classes, Rle};

/// Everything that must be loaded before requests can be served.
pub struct Ready {
    pub predictor: PredictorHandle,
    pub taxonomy: ClassTaxonomy,
    pub table: NutritionTable,
    pub calibration: AreaCalibration,
    pub diary: Mutex<DiaryStore>,
    pub config_digest: String,
}

impl Ready {
    /// Loads the model, tables and diary named by the config. Blocking.
    pub fn load(config: &ServiceConfig) -> myfood_core::Result<Self> {
        let dataset = config.dataset.as_deref().map(Dataset::open).transpose()?;
        let taxonomy = dataset
            .as_ref()
            .map_or_else(ClassTaxonomy::brazilian_food, |d| d.taxonomy().clone());
        let predictor = load_predictor(&config.model, config.weights.as_deref(), config.backends.as_deref(), dataset.as_ref())?;
        Ok(Self {
            table: read_nutrition_table(&config.nutrition, &taxonomy)?,
            calibration: read_calibration(&config.calibration, &taxonomy)?,
            diary: Mutex::new(DiaryStore::open(&config.diary)?),
            predictor,
            taxonomy,
            config_digest: config.digest(),
        })
    }
}

pub struct AppState {
    ready: OnceLock<Arc<Ready>>,
    started: Instant,
    max_upload_bytes: usize,
    inference: Semaphore,
}

impl AppState {
    pub fn new(max_upload_bytes: usize, inference_workers: usize) -> Arc<Self> {
        Arc::new(Self {
            ready: OnceLock::new(),
            started: Instant::now(),
            max_upload_bytes,
            inference: Semaphore::new(inference_workers),
        })
    }

    /// Makes the service available. Only the first call has an effect.
    pub fn initialize(&self, ready: Ready) {
        if self.ready.set(Arc::new(ready)).is_err() {
            log::warn!("service already initialized");
        }
    }

    fn ready(&self) -> Result<Arc<Ready>, ApiError> {
        self.ready.get().cloned().ok_or_else(|| {
            ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "service is still starting")
        })
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.max_upload_bytes;
    Router::new()
        .route("/predict", post(predict))
        .route("/foods", get(foods))
        .route("/health", get(health))
        .route("/diary", post(diary_post).get(diary_get))
        .route("/diary/{id}", patch(diary_patch))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    class: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, class: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            class,
            message: message.into(),
        }
    }

    fn unprocessable(e: Error) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, e.class(), e.to_string())
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Decode(_) => StatusCode::BAD_REQUEST,
            Error::Validation(_) | Error::Estimation { .. } | Error::Lookup(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.class(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = Json(json!({ "error": self.class, "message": self.message }));
        (self.status, body).into_response()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMask {
    pub class_id: ClassId,
    pub name: String,
    pub pixel_area: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<Rle>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub model: String,
    pub model_digest: String,
    pub image_digest: String,
    pub width: u32,
    pub height: u32,
    pub classes: Vec<ClassMask>,
    /// Base64 PNG of the whole label mask, when requested with `format=png`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_png: Option<String>,
    pub meal: MealEstimate,
}

#[derive(Debug, Default, Deserialize)]
struct PredictQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn predict(State(state): State<Arc<AppState>>, Query(q): Query<PredictQuery>, body: Bytes) -> Result<Json<PredictResponse>, ApiError> {
    let ready = state.ready()?;
    let png = match q.format.as_deref() {
        None | Some("rle") => false,
        Some("png") => true,
        Some(other) => {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "usage", format!("unknown format {other:?} (rle, png)")));
        }
    };
    if body.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "decode", "empty payload"));
    }
    let _permit = state.inference.acquire().await.expect("semaphore is never closed");
    let task_ready = ready.clone();
    let (image, pred) = tokio::task::spawn_blocking(move || task_ready.predictor.predict_encoded(&body))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let meal = estimate_meal(&pred, &ready.table, &ready.calibration)?;
    let label_png = if png {
        Some(base64::engine::general_purpose::STANDARD.encode(pred.label_mask.to_png_bytes()?))
    } else {
        None
    };
    Ok(Json(PredictResponse {
        model: ready.predictor.name().to_string(),
        model_digest: ready.predictor.digest(),
        image_digest: image_digest(&image),
        width: image.width(),
        height: image.height(),
        classes: class_masks(&pred, &ready.taxonomy, !png),
        label_png,
        meal,
    }))
}

fn class_masks(pred: &PredictionOutput, taxonomy: &ClassTaxonomy, with_rle: bool) -> Vec<ClassMask> {
    let mask = &pred.label_mask;
    encode_classes(mask)
        .into_iter()
        .map(|(class, rle)| {
            let confidence = match (&pred.class_scores, &pred.instances) {
                (Some(scores), _) => scores.mean_confidence(mask, class),
                (None, Some(instances)) => instances
                    .iter()
                    .filter(|i| i.class_id == class)
                    .map(|i| f64::from(i.score))
                    .reduce(f64::max),
                (None, None) => None,
            };
            ClassMask {
                class_id: class,
                name: taxonomy.name(class).unwrap_or_default().to_string(),
                pixel_area: mask.pixel_count(class),
                confidence,
                mask: with_rle.then_some(rle),
            }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Food {
    pub class_id: ClassId,
    pub name: String,
    pub per_100g: Nutrients,
    pub grams_per_pixel: Option<Decimal>,
}

async fn foods(State(state): State<Arc<AppState>>) -> Result<Json<Vec<Food>>, ApiError> {
    let ready = state.ready()?;
    Ok(Json(
        ready
            .table
            .values()
            .map(|p| Food {
                class_id: p.class_id,
                name: p.name.clone(),
                per_100g: p.per_100g,
                grams_per_pixel: ready.calibration.get(p.class_id),
            })
            .collect(),
    ))
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    let uptime = state.started.elapsed().as_secs_f64();
    match state.ready.get() {
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "starting", "uptime_seconds": uptime })),
        )
            .into_response(),
        Some(r) => Json(json!({
            "status": "ok",
            "model": r.predictor.name(),
            "model_digest": r.predictor.digest(),
            "config_digest": r.config_digest,
            "uptime_seconds": uptime,
        }))
        .into_response(),
    }
}

/// A prediction response is accepted as is; only `meal` is required.
#[derive(Debug, Deserialize)]
struct DiaryPost {
    meal: MealEstimate,
    #[serde(default)]
    image_ref: Option<String>,
    #[serde(default)]
    image_digest: Option<String>,
    #[serde(default)]
    timestamp: Option<DateTime<Utc>>,
    #[serde(default)]
    edits: Vec<EditRequest>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiaryPatch {
    edits: Vec<EditRequest>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DiaryListing {
    pub entries: Vec<DiaryEntry>,
    pub daily: Vec<DailyTotal>,
    pub totals: Nutrients,
}

fn parse_json<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| {
        let status = if e.is_data() {
            StatusCode::UNPROCESSABLE_ENTITY
        } else {
            StatusCode::BAD_REQUEST
        };
        ApiError::new(status, "json", e.to_string())
    })
}

async fn diary_post(State(state): State<Arc<AppState>>, body: Bytes) -> Result<(StatusCode, Json<DiaryEntry>), ApiError> {
    let ready = state.ready()?;
    let post: DiaryPost = parse_json(&body)?;
    post.meal.check(&ready.table).map_err(ApiError::unprocessable)?;
    let entry = DiaryEntry {
        entry_id: uuid::Uuid::new_v4().to_string(),
        timestamp: post.timestamp.unwrap_or_else(Utc::now),
        image_ref: post.image_ref.or(post.image_digest).unwrap_or_default(),
        meal: post.meal,
        user_edits: Vec::new(),
    };
    let entry = entry
        .with_edits(&post.edits, &ready.table, &ready.taxonomy)
        .map_err(ApiError::unprocessable)?;
    let stored = entry.clone();
    with_diary(ready, move |d| d.insert(stored)).await?;
    Ok((StatusCode::CREATED, Json(entry)))
}

#[derive(Debug, Default, Deserialize)]
struct RangeQuery {
    from: Option<String>,
    to: Option<String>,
}

async fn diary_get(State(state): State<Arc<AppState>>, Query(q): Query<RangeQuery>) -> Result<Json<DiaryListing>, ApiError> {
    let ready = state.ready()?;
    let from = q.from.as_deref().map(|s| parse_bound(s, false)).transpose()?;
    let to = q.to.as_deref().map(|s| parse_bound(s, true)).transpose()?;
    let diary = ready.diary.lock().expect("diary lock");
    let entries: Vec<DiaryEntry> = diary.range(from, to).into_iter().cloned().collect();
    let daily = daily_totals(&entries);
    let totals = entries.iter().map(|e| e.meal.totals).sum();
    Ok(Json(DiaryListing { entries, daily, totals }))
}

async fn diary_patch(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> Result<Json<DiaryEntry>, ApiError> {
    let ready = state.ready()?;
    let patch: DiaryPatch = parse_json(&body)?;
    // entries are never deleted, so this cannot go stale before the write
    if ready.diary.lock().expect("diary lock").get(&id).is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, "lookup", format!("no diary entry {id}")));
    }
    let task_ready = ready.clone();
    let entry = with_diary(ready, move |d| {
        let current = d.get(&id).expect("entry exists");
        let next = current.with_edits(&patch.edits, &task_ready.table, &task_ready.taxonomy)?;
        d.replace(next.clone())?;
        Ok(next)
    })
    .await?;
    Ok(Json(entry))
}

/// Runs a diary operation off the async threads; the mutex serializes writers.
async fn with_diary<T: Send + 'static>(
    ready: Arc<Ready>,
    f: impl FnOnce(&mut DiaryStore) -> myfood_core::Result<T> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(move || {
        let mut diary = ready.diary.lock().expect("diary lock");
        f(&mut diary)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
    .map_err(ApiError::from)
}

/// A date covers the whole UTC day; otherwise RFC 3339.
fn parse_bound(s: &str, end: bool) -> Result<DateTime<Utc>, ApiError> {
    if let Ok(date) = s.parse::<NaiveDate>() {
        let t = if end {
            date.and_hms_nano_opt(23, 59, 59, 999_999_999)
        } else {
            date.and_hms_opt(0, 0, 0)
        };
        return Ok(t.expect("valid time").and_utc());
    }
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "usage", format!("bad time {s:?}: {e}")))
}

/// Binds, then loads in the background so `/health` answers 503 meanwhile.
/// Returns when the server stops or loading fails.
pub async fn serve(config: ServiceConfig) -> myfood_core::Result<()> {
    let state = AppState::new(config.max_upload_bytes, config.inference_workers);
    let listener = tokio::net::TcpListener::bind(&config.listen)
        .await
        .map_err(|e| Error::Validation(format!("cannot listen on {}: {e}", config.listen)))?;
    log::info!("listening on {}", config.listen);

    let loader_state = state.clone();
    let loader = tokio::task::spawn_blocking(move || -> myfood_core::Result<()> {
        let ready = Ready::load(&config)?;
        log::info!("model {} loaded, digest {}", ready.predictor.name(), ready.predictor.digest());
        loader_state.initialize(ready);
        Ok(())
    });
    let server = axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .into_future();
    tokio::pin!(server);
    let io = |e: std::io::Error| Error::Validation(format!("server failed: {e}"));
    tokio::select! {
        r = &mut server => r.map_err(io),
        loaded = loader => {
            loaded.map_err(|e| Error::Validation(format!("loader panicked: {e}")))??;
            server.await.map_err(io)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds() {
        assert_eq!(parse_bound("2026-03-01", false).unwrap().to_rfc3339(), "2026-03-01T00:00:00+00:00");
        assert!(parse_bound("2026-03-01", true).unwrap() > parse_bound("2026-03-01T23:59:59Z", false).unwrap());
        assert!(parse_bound("yesterday", false).is_err());
    }
}
