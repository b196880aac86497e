//! HTTP inference service.
//!
//! | route                  | body                                                    | reply                                 |
//! |------------------------|---------------------------------------------------------|---------------------------------------|
//! | `POST /v1/generate`    | `{image, drags, seed, steps = 50, cfg = 5}`             | `{image, latency_ms}`                 |
//! | `POST /v1/segment`     | `{image, drags, mask, t = 200, clusters = 4, seed}`     | `{mask, clusters, n_clusters, selected, latency_ms}` |
//! | `GET /v1/meta`         |                                                         | `{N, resolution, checkpoint_hash, ...}` |
//! | `GET /v1/samples`      |                                                         | `{ids}`                               |
//! | `GET /v1/samples/{id}` |                                                         | `{id, image, drags}`                  |
//!
//! Images and masks travel as base64 PNG. `drags` is a DragSet object
//! `{capacity, drags: [{source: [h, w], termination: [h, w]}]}` or a bare
//! array of drags. Malformed bodies or PNGs get 400, violations of the model's
//! contract (too many drags, wrong size, sources outside the image) get 422,
//! and requests beyond the queue depth get 503.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use dragpart_core::segment::SegmentationResult;
use dragpart_core::{Drag, DragSet, GridSize};
use dragpart_diffusion::{sample, Checkpoint, SampleOptions};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::config::ExperimentConfig;
use crate::dataset;
use crate::error::Error;
use crate::experiment::checkpoint_hash;
use crate::imageio;
use crate::segmentation::segment_image;

/// Largest classifier-free guidance weight accepted.
pub const MAX_GUIDANCE: f64 = 20.0;
/// Largest cluster count accepted by `/v1/segment`.
pub const MAX_CLUSTERS: usize = 16;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    checkpoint: Checkpoint,
    checkpoint_hash: String,
    config: ExperimentConfig,
    samples: Option<PathBuf>,
    queue: Arc<Semaphore>,
}

impl AppState {
    pub fn new(checkpoint: Checkpoint, config: ExperimentConfig, samples: Option<PathBuf>) -> crate::Result<Self> {
        let checkpoint_hash = checkpoint_hash(&checkpoint)?;
        let queue = Arc::new(Semaphore::new(config.service.queue_depth));
        Ok(Self { inner: Arc::new(Inner { checkpoint, checkpoint_hash, config, samples, queue }) })
    }

    /// Admission semaphore; each in-flight job holds one permit.
    pub fn queue(&self) -> Arc<Semaphore> {
        self.inner.queue.clone()
    }

    pub fn checkpoint_hash(&self) -> &str {
        &self.inner.checkpoint_hash
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/generate", post(generate))
        .route("/v1/segment", post(segment))
        .route("/v1/meta", get(meta))
        .route("/v1/samples", get(samples))
        .route("/v1/samples/{id}", get(sample_by_id))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> crate::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, checkpoint = state.checkpoint_hash(), "serving");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Image(_) => StatusCode::BAD_REQUEST,
            Error::Core(_) | Error::Config(_) | Error::Validation { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Diffusion(d) if d.is_capacity() => StatusCode::UNPROCESSABLE_ENTITY,
            Error::Diffusion(dragpart_diffusion::Error::Config(_) | dragpart_diffusion::Error::Core(_)) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::File { .. } => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let message = if e.is_capacity() { format!("too many drags: {e}") } else { e.to_string() };
        Self { status, message }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message, "status": self.status.as_u16() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

/// `drags` field: a DragSet object or a bare list.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum DragsField {
    Set { capacity: Option<usize>, drags: Vec<Drag> },
    List(Vec<Drag>),
}

impl DragsField {
    /// Drags against the model capacity `n`; more than `n` drags, or a
    /// declared capacity above `n`, is a capacity error.
    pub fn into_set(self, n: usize, image: GridSize) -> Result<DragSet, ApiError> {
        let (declared, drags) = match self {
            DragsField::Set { capacity, drags } => (capacity, drags),
            DragsField::List(drags) => (None, drags),
        };
        if drags.len() > n {
            return Err(ApiError::unprocessable(format!("too many drags: got {}, the model accepts at most N = {n}", drags.len())));
        }
        if let Some(c) = declared {
            if c > n {
                return Err(ApiError::unprocessable(format!("drag capacity {c} exceeds the model's N = {n}")));
            }
        }
        let set = DragSet::new(n, drags).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        set.validate(image).map_err(|e| ApiError::unprocessable(e.to_string()))?;
        Ok(set)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub image: String,
    pub drags: serde_json::Value,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_cfg")]
    pub cfg: f64,
}

fn default_steps() -> usize {
    50
}

fn default_cfg() -> f64 {
    5.0
}

fn default_t() -> usize {
    dragpart_core::segment::DEFAULT_TIMESTEP
}

fn default_clusters() -> usize {
    dragpart_core::segment::DEFAULT_CLUSTERS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub image: String,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentRequest {
    pub image: String,
    pub drags: serde_json::Value,
    /// Foreground mask PNG.
    pub mask: String,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub mask: String,
    /// Cluster of every pixel in row-major order, `-1` outside the foreground.
    pub clusters: Vec<i32>,
    pub n_clusters: usize,
    /// Clusters that contain a drag source.
    pub selected: Vec<usize>,
    pub latency_ms: f64,
}

fn drags_field(value: serde_json::Value) -> Result<DragsField, ApiError> {
    serde_json::from_value(value).map_err(|e| ApiError::bad_request(format!("malformed drags: {e}")))
}

fn decode_input(state: &Inner, image: &str) -> Result<dragpart_core::ImageGrid, ApiError> {
    let png = imageio::from_base64(image)?;
    let img = imageio::decode_image(&png)?;
    let want = state.checkpoint.config().image;
    if img.height() != want.h || img.width() != want.w {
        return Err(ApiError::unprocessable(format!("image is {}x{}, the model expects {}x{}", img.height(), img.width(), want.h, want.w)));
    }
    Ok(img)
}

/// Runs `job` on the blocking pool while holding a queue permit.
async fn run_job<T, F>(state: &AppState, job: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Inner) -> Result<T, ApiError> + Send + 'static,
{
    let permit = state
        .inner
        .queue
        .clone()
        .try_acquire_owned()
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "server busy: request queue is full"))?;
    let inner = state.inner.clone();
    let out = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        job(&inner)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?;
    out
}

async fn generate(State(state): State<AppState>, body: Bytes) -> ApiResult<GenerateResponse> {
    let req: GenerateRequest = parse(&body)?;
    let started = Instant::now();
    let image = run_job(&state, move |inner| {
        let config = inner.checkpoint.config();
        let drags = drags_field(req.drags)?;
        let y = decode_input(inner, &req.image)?;
        let drags = drags.into_set(config.drag_capacity, config.image)?;
        if req.steps == 0 || req.steps > inner.config.service.max_steps {
            return Err(ApiError::unprocessable(format!("steps must lie in 1..={}", inner.config.service.max_steps)));
        }
        if !req.cfg.is_finite() || !(0.0..=MAX_GUIDANCE).contains(&req.cfg) {
            return Err(ApiError::unprocessable(format!("cfg must lie in [0, {MAX_GUIDANCE}]")));
        }
        let opts = SampleOptions { steps: req.steps, guidance: req.cfg, seed: req.seed };
        let out = sample(&inner.checkpoint, &y, &drags, &opts).map_err(Error::from)?;
        Ok(imageio::to_base64(&imageio::encode_image(&out)?))
    })
    .await?;
    let latency_ms = started.elapsed().as_secs_f64() * 1e3;
    tracing::info!(route = "/v1/generate", latency_ms, "request");
    Ok(Json(GenerateResponse { image, latency_ms }))
}

async fn segment(State(state): State<AppState>, body: Bytes) -> ApiResult<SegmentResponse> {
    let req: SegmentRequest = parse(&body)?;
    let started = Instant::now();
    let result: SegmentationResult = run_job(&state, move |inner| {
        let config = inner.checkpoint.config();
        let drags = drags_field(req.drags)?;
        let y = decode_input(inner, &req.image)?;
        let mask = imageio::decode_mask(&imageio::from_base64(&req.mask)?)?;
        if mask.height != config.image.h || mask.width != config.image.w {
            return Err(ApiError::unprocessable("mask size differs from the image size"));
        }
        let drags = drags.into_set(config.drag_capacity, config.image)?;
        if req.t > inner.checkpoint.schedule.steps() {
            return Err(ApiError::unprocessable(format!("t must lie in 0..={}", inner.checkpoint.schedule.steps())));
        }
        if !(2..=MAX_CLUSTERS).contains(&req.clusters) {
            return Err(ApiError::unprocessable(format!("clusters must lie in 2..={MAX_CLUSTERS}")));
        }
        Ok(segment_image(&inner.checkpoint, &y, &drags, &mask, req.t, req.clusters, req.seed, &inner.config.segment)?)
    })
    .await?;
    let latency_ms = started.elapsed().as_secs_f64() * 1e3;
    tracing::info!(route = "/v1/segment", latency_ms, "request");
    Ok(Json(SegmentResponse {
        mask: imageio::to_base64(&imageio::encode_mask(&result.mask)?),
        clusters: result.clusters,
        n_clusters: result.n_clusters,
        selected: result.selected,
        latency_ms,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Range<T> {
    pub min: T,
    pub max: T,
    pub default: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranges {
    pub steps: Range<usize>,
    pub cfg: Range<f64>,
    pub t: Range<usize>,
    pub clusters: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResponse {
    #[serde(rename = "N")]
    pub n: usize,
    pub resolution: usize,
    pub checkpoint_hash: String,
    pub backbone: dragpart_diffusion::Backbone,
    pub queue_depth: usize,
    pub ranges: Ranges,
}

async fn meta(State(state): State<AppState>) -> Json<MetaResponse> {
    let inner = &state.inner;
    let c = inner.checkpoint.config();
    Json(MetaResponse {
        n: c.drag_capacity,
        resolution: c.image.h,
        checkpoint_hash: inner.checkpoint_hash.clone(),
        backbone: c.backbone,
        queue_depth: inner.config.service.queue_depth,
        ranges: Ranges {
            steps: Range { min: 1, max: inner.config.service.max_steps, default: default_steps() },
            cfg: Range { min: 0.0, max: MAX_GUIDANCE, default: default_cfg() },
            t: Range { min: 0, max: inner.checkpoint.schedule.steps(), default: default_t() },
            clusters: Range { min: 2, max: MAX_CLUSTERS, default: default_clusters() },
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesResponse {
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub id: String,
    /// First frame as base64 PNG.
    pub image: String,
    /// Ground-truth drags to the last frame.
    pub drags: DragSet,
}

async fn samples(State(state): State<AppState>) -> ApiResult<SamplesResponse> {
    let Some(root) = &state.inner.samples else {
        return Ok(Json(SamplesResponse { ids: Vec::new() }));
    };
    let manifest = dataset::read_manifest(root)?;
    Ok(Json(SamplesResponse { ids: manifest.animations.into_iter().map(|a| a.dir).collect() }))
}

async fn sample_by_id(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<SampleResponse> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("unknown sample `{id}`"));
    let root = state.inner.samples.as_ref().ok_or_else(not_found)?;
    let manifest = dataset::read_manifest(root)?;
    let entry = manifest.animations.iter().find(|a| a.dir == id).ok_or_else(not_found)?;
    let meta = dataset::read_metadata(root, entry)?;
    let png = std::fs::read(dataset::frame_path(root, entry.index, "frame", 0)).map_err(|e| Error::file(root, e))?;
    Ok(Json(SampleResponse { id: entry.dir.clone(), image: imageio::to_base64(&png), drags: meta.drags }))
}
