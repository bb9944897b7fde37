//! HTTP service over a directory-backed scene store.
//!
//! Previews render on the blocking pool, one frame per request, and are cached per
//! (trajectory version, frame, radius). Shaping jobs run on a dedicated worker thread so
//! they never hold up previews. See `docs/api.md` for the wire format.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::Engine as _;
use log::{error, info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use scenecam::diffusion::{
    initial_noise, masked_statistics, sample_with_shaping, uniform_steps, Conditioning, LatentVideo, NoiseSchedule,
    ShapingConfig,
};
use scenecam::geometry::{
    canonicalize, interpolate_keyframes, unproject, CameraIntrinsics, PointCloud, ScaleSpace, Trajectory,
};
use scenecam::io::{self, trajectory_json, TrajectoryJson};
use scenecam::metrics::{evaluate, EvalMode, TrajectoryPair};
use scenecam::raster::{ColorRaster, DepthRaster};
use scenecam::renderer::{render_preview, render_view, shaping_mask, RenderedFrame, DEFAULT_RADIUS};
use scenecam::{Error, Result};

use crate::commands::{make_denoiser, DenoiserKind};

pub const DEFAULT_MAX_POINTS: usize = 50_000;

/// Structured error body `{code, message, detail}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: Value::Null,
        }
    }

    fn not_found(what: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", what)
    }

    fn bad_request(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", msg)
    }

    fn unprocessable(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "unprocessable", msg)
    }

    fn conflict(msg: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", msg)
    }

    fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
            Error::Parse { .. } | Error::Format { .. } | Error::Json(_) => (StatusCode::BAD_REQUEST, "malformed"),
            _ => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
        };
        Self::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"code": self.code, "message": self.message, "detail": self.detail});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        ApiError::bad_request("malformed JSON body")
            .with_detail(json!({"line": e.line(), "column": e.column(), "error": e.to_string()}))
    })
}

#[derive(Debug, Clone)]
pub struct TrajectoryState {
    pub version: u64,
    pub keyframes: Trajectory,
    /// Canonical metric camera-to-world.
    pub trajectory: Trajectory,
}

type PreviewKey = (u64, usize, usize);

pub struct Scene {
    pub id: String,
    pub k: CameraIntrinsics,
    pub image: ColorRaster,
    pub depth: DepthRaster,
    pub cloud: PointCloud,
    pub created_at: u64,
    dir: PathBuf,
    trajectory: Mutex<Option<TrajectoryState>>,
    version: Mutex<u64>,
    previews: Mutex<HashMap<PreviewKey, Arc<RenderedFrame>>>,
    comparisons: Mutex<BTreeMap<String, Trajectory>>,
}

#[derive(Serialize, Deserialize)]
struct SceneMeta {
    scene_id: String,
    created_at: u64,
}

#[derive(Serialize, Deserialize)]
struct StoredTrajectory {
    version: u64,
    n_frames: usize,
    keyframes: TrajectoryJson,
}

impl Scene {
    fn build(
        id: String,
        dir: PathBuf,
        image: ColorRaster,
        depth: DepthRaster,
        k: CameraIntrinsics,
        created_at: u64,
    ) -> Result<Self> {
        let cloud = unproject(&depth, &k, Some(&image))?;
        Ok(Self {
            id,
            k,
            image,
            depth,
            cloud,
            created_at,
            dir,
            trajectory: Mutex::new(None),
            version: Mutex::new(0),
            previews: Mutex::new(HashMap::new()),
            comparisons: Mutex::new(BTreeMap::new()),
        })
    }

    fn persist_inputs(&self) -> Result<()> {
        io::write_color_png(&self.dir.join("image.png"), &self.image)?;
        io::write_pfm(&self.dir.join("depth.pfm"), &self.depth)?;
        io::write_json(&self.dir.join("intrinsics.json"), &self.k)?;
        io::write_json(
            &self.dir.join("meta.json"),
            &SceneMeta {
                scene_id: self.id.clone(),
                created_at: self.created_at,
            },
        )
    }

    fn load(dir: &Path) -> Result<Self> {
        let meta: SceneMeta = io::read_json(&dir.join("meta.json"))?;
        let scene = Self::build(
            meta.scene_id,
            dir.to_path_buf(),
            io::read_color_png(&dir.join("image.png"))?,
            io::read_pfm(&dir.join("depth.pfm"))?,
            io::read_intrinsics(&dir.join("intrinsics.json"))?,
            meta.created_at,
        )?;
        let traj_path = dir.join("trajectory.json");
        if traj_path.is_file() {
            let stored: StoredTrajectory = io::read_json(&traj_path)?;
            let keyframes = stored.keyframes.to_trajectory()?;
            let trajectory = interpolate_keyframes(&keyframes, stored.n_frames)?;
            *scene.version.lock().unwrap() = stored.version;
            *scene.trajectory.lock().unwrap() = Some(TrajectoryState {
                version: stored.version,
                keyframes,
                trajectory,
            });
        }
        let cdir = dir.join("comparisons");
        if cdir.is_dir() {
            let mut comps = scene.comparisons.lock().unwrap();
            for entry in std::fs::read_dir(&cdir)?.filter_map(|e| e.ok()) {
                let p = entry.path();
                if p.extension().is_some_and(|e| e == "json") {
                    let name = p.file_stem().unwrap().to_string_lossy().into_owned();
                    comps.insert(name, io::read_trajectory(&p)?);
                }
            }
        }
        Ok(scene)
    }

    pub fn trajectory(&self) -> Option<TrajectoryState> {
        self.trajectory.lock().unwrap().clone()
    }

    /// Renders one frame of the current trajectory, reusing the cache.
    fn preview_frame(&self, state: &TrajectoryState, frame: usize, radius: usize) -> Arc<RenderedFrame> {
        let key = (state.version, frame, radius);
        if let Some(hit) = self.previews.lock().unwrap().get(&key) {
            return hit.clone();
        }
        let pose = &state.trajectory.poses[frame];
        let rendered = Arc::new(render_view(
            &self.cloud,
            pose,
            state.trajectory.convention,
            &self.k,
            radius,
        ));
        let mut cache = self.previews.lock().unwrap();
        cache.retain(|(v, _, _), _| *v >= state.version);
        cache.entry(key).or_insert(rendered).clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeRequest {
    /// A step index, or `"off"` for the unshaped baseline.
    #[serde(default = "default_t_ns", deserialize_with = "t_ns_or_off")]
    pub t_ns: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_denoiser")]
    pub denoiser: DenoiserKind,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    #[serde(default = "default_radius")]
    pub radius: usize,
}

fn default_t_ns() -> usize {
    900
}

/// `"off"` maps to the top of the schedule, where no step is shaped.
fn t_ns_or_off<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<usize, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Threshold {
        Step(usize),
        Word(String),
    }
    match Threshold::deserialize(d)? {
        Threshold::Step(t) => Ok(t),
        Threshold::Word(w) if w == "off" => Ok(NoiseSchedule::default().num_steps()),
        Threshold::Word(w) => Err(serde::de::Error::custom(format!(
            "t_ns must be a step or \"off\", got {w:?}"
        ))),
    }
}
fn default_steps() -> usize {
    50
}
fn default_denoiser() -> DenoiserKind {
    DenoiserKind::Pull
}
fn default_kernel() -> usize {
    3
}
fn default_radius() -> usize {
    DEFAULT_RADIUS
}

impl<'de> Deserialize<'de> for DenoiserKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match String::deserialize(d)?.as_str() {
            "oracle" => Ok(DenoiserKind::Oracle),
            "pull" => Ok(DenoiserKind::Pull),
            "noise" => Ok(DenoiserKind::Noise),
            other => Err(serde::de::Error::unknown_variant(other, &["oracle", "pull", "noise"])),
        }
    }
}

pub struct Job {
    pub id: String,
    pub scene_id: String,
    pub version: u64,
    pub status: JobStatus,
    pub error: Option<String>,
    pub frames: Vec<Vec<u8>>,
    pub masked_rmse: Option<f64>,
}

struct JobRequest {
    job: Arc<Mutex<Job>>,
    scene: Arc<Scene>,
    trajectory: Trajectory,
    params: ShapeRequest,
}

pub struct AppState {
    data_dir: PathBuf,
    scenes: RwLock<HashMap<String, Arc<Scene>>>,
    jobs: Mutex<HashMap<String, Arc<Mutex<Job>>>>,
    job_tx: Mutex<mpsc::Sender<JobRequest>>,
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn run_job(req: &JobRequest) -> Result<(Vec<Vec<u8>>, f64)> {
    let p = req.params;
    let frames = render_preview(&req.scene.cloud, &req.trajectory, &req.scene.k, p.radius);
    let masks = frames
        .iter()
        .map(|f| shaping_mask(f, p.kernel).map(|m| m.mask))
        .collect::<Result<Vec<_>>>()?;
    let colors: Vec<_> = frames.into_iter().map(|f| f.color).collect();
    let preview = LatentVideo::from_colors(&colors)?;
    let schedule = NoiseSchedule::default();
    let steps = uniform_steps(schedule.num_steps(), p.steps)?;
    let denoiser = make_denoiser(p.denoiser, &preview)?;
    let cfg = ShapingConfig::new(preview, masks, p.t_ns, p.kernel, p.seed)?;
    let init = initial_noise(p.seed, cfg.preview.shape());
    let out = sample_with_shaping(
        denoiser.as_ref(),
        &cfg,
        &schedule,
        &steps,
        &init,
        &Conditioning::default(),
    )?;
    let (rmse, _) = masked_statistics(&out, &cfg.preview, &cfg.masks)?;
    let pngs = out
        .to_colors()?
        .iter()
        .map(io::encode_color_png)
        .collect::<Result<Vec<_>>>()?;
    Ok((pngs, rmse))
}

fn worker(rx: mpsc::Receiver<JobRequest>) {
    while let Ok(req) = rx.recv() {
        let id = {
            let mut job = req.job.lock().unwrap();
            job.status = JobStatus::Running;
            job.id.clone()
        };
        let result = run_job(&req);
        let mut job = req.job.lock().unwrap();
        match result {
            Ok((frames, rmse)) => {
                job.frames = frames;
                job.masked_rmse = Some(rmse);
                job.status = JobStatus::Done;
                info!("job {id} done");
            }
            Err(e) => {
                warn!("job {id} failed: {e}");
                job.error = Some(e.to_string());
                job.status = JobStatus::Failed;
            }
        }
    }
}

impl AppState {
    /// Opens the store under `data_dir`, loading every scene in `scenes/`, and starts the
    /// shaping worker.
    pub fn open(data_dir: impl Into<PathBuf>) -> Result<Arc<Self>> {
        let data_dir = data_dir.into();
        let scenes_dir = data_dir.join("scenes");
        std::fs::create_dir_all(&scenes_dir)?;
        let mut scenes = HashMap::new();
        for entry in std::fs::read_dir(&scenes_dir)?.filter_map(|e| e.ok()) {
            if !entry.path().is_dir() {
                continue;
            }
            match Scene::load(&entry.path()) {
                Ok(s) => {
                    scenes.insert(s.id.clone(), Arc::new(s));
                }
                Err(e) => error!("skipping scene {}: {e}", entry.path().display()),
            }
        }
        info!("loaded {} scene(s) from {}", scenes.len(), data_dir.display());
        let (tx, rx) = mpsc::channel();
        std::thread::Builder::new()
            .name("shaping-worker".into())
            .spawn(move || worker(rx))?;
        Ok(Arc::new(Self {
            data_dir,
            scenes: RwLock::new(scenes),
            jobs: Mutex::new(HashMap::new()),
            job_tx: Mutex::new(tx),
        }))
    }

    fn scene(&self, id: &str) -> ApiResult<Arc<Scene>> {
        self.scenes
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown scene {id}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/scenes", post(create_scene).get(list_scenes))
        .route("/scenes/{id}", get(scene_summary))
        .route("/scenes/{id}/pointcloud", get(pointcloud))
        .route("/scenes/{id}/trajectory", put(put_trajectory).get(get_trajectory))
        .route("/scenes/{id}/preview/{frame}", get(preview))
        .route("/scenes/{id}/masks/{frame}", get(mask))
        .route("/scenes/{id}/shape", post(start_shape))
        .route("/scenes/{id}/jobs/{job}", get(job_status))
        .route("/scenes/{id}/jobs/{job}/frames/{frame}", get(job_frame))
        .route("/scenes/{id}/comparisons/{name}", put(put_comparison))
        .route("/scenes/{id}/metrics", get(metrics))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(host: &str, port: u16, data_dir: PathBuf) -> Result<()> {
    let state = AppState::open(data_dir)?;
    let listener = tokio::net::TcpListener::bind((host, port)).await?;
    let addr = listener.local_addr()?;
    eprintln!("listening on http://{addr}");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

#[derive(Deserialize)]
struct CreateScene {
    /// Base64 PNG.
    image: String,
    /// Base64 PFM or 16-bit millimeter PNG.
    depth: String,
    intrinsics: CameraIntrinsics,
}

fn b64(field: &str, s: &str) -> ApiResult<Vec<u8>> {
    base64::engine::general_purpose::STANDARD
        .decode(s)
        .map_err(|e| ApiError::bad_request(format!("{field} is not valid base64: {e}")))
}

fn decode_depth(bytes: &[u8]) -> Result<DepthRaster> {
    if bytes.starts_with(b"Pf") {
        io::decode_pfm(bytes)
    } else {
        io::decode_depth_png16(bytes)
    }
}

async fn create_scene(State(st): State<Arc<AppState>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateScene = parse_body(&body)?;
    let bad = |what: &str, e: Error| ApiError::bad_request(format!("malformed {what}: {e}"));
    let image = io::decode_color_png(&b64("image", &req.image)?).map_err(|e| bad("image", e))?;
    let depth = decode_depth(&b64("depth", &req.depth)?).map_err(|e| bad("depth", e))?;
    let k = req.intrinsics;
    k.validate().map_err(|e| bad("intrinsics", e))?;
    if (image.width(), image.height()) != (k.width, k.height) || (depth.width(), depth.height()) != (k.width, k.height)
    {
        return Err(ApiError::bad_request(format!(
            "image {}x{}, depth {}x{} and intrinsics {}x{} must agree",
            image.width(),
            image.height(),
            depth.width(),
            depth.height(),
            k.width,
            k.height
        )));
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let dir = st.data_dir.join("scenes").join(&id);
    let scene = tokio::task::spawn_blocking(move || -> Result<Scene> {
        let s = Scene::build(id, dir, image, depth, k, now_secs())?;
        s.persist_inputs()?;
        Ok(s)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    let body = json!({"scene_id": scene.id, "n_points": scene.cloud.len()});
    st.scenes.write().unwrap().insert(scene.id.clone(), Arc::new(scene));
    Ok((StatusCode::CREATED, Json(body)))
}

fn summary(s: &Scene) -> Value {
    let t = s.trajectory();
    json!({
        "scene_id": s.id,
        "width": s.k.width,
        "height": s.k.height,
        "n_points": s.cloud.len(),
        "created_at": s.created_at,
        "version": t.as_ref().map_or(0, |t| t.version),
        "n_frames": t.as_ref().map_or(0, |t| t.trajectory.len()),
    })
}

async fn list_scenes(State(st): State<Arc<AppState>>) -> Json<Value> {
    let scenes = st.scenes.read().unwrap();
    let mut items: Vec<Value> = scenes.values().map(|s| summary(s)).collect();
    items.sort_by(|a, b| a["scene_id"].as_str().cmp(&b["scene_id"].as_str()));
    Json(json!({"scenes": items}))
}

async fn scene_summary(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    Ok(Json(summary(st.scene(&id)?.as_ref())))
}

#[derive(Deserialize)]
struct CloudQuery {
    max_points: Option<usize>,
    format: Option<String>,
}

/// `u32` count, then `count × 3` `f32` positions, then `count × 3` `u8` colors, all
/// little-endian.
pub fn encode_cloud_binary(cloud: &PointCloud) -> Vec<u8> {
    let n = cloud.len();
    let mut out = Vec::with_capacity(4 + n * 15);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for p in &cloud.positions {
        for v in p.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    for i in 0..n {
        let c = cloud.colors.as_ref().map_or([1.0; 3], |c| c[i]);
        out.extend(c.iter().map(|v| (v * 255.0).round() as u8));
    }
    out
}

async fn pointcloud(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<CloudQuery>,
) -> ApiResult<Response> {
    let scene = st.scene(&id)?;
    let max = q.max_points.unwrap_or(DEFAULT_MAX_POINTS);
    if max == 0 {
        return Err(ApiError::bad_request("max_points must be positive"));
    }
    let total = scene.cloud.len();
    let cloud = scene.cloud.downsample(max);
    match q.format.as_deref().unwrap_or("json") {
        "json" => Ok(Json(json!({
            "total_points": total,
            "returned_points": cloud.len(),
            "positions": cloud.positions.iter().map(|p| [p.x, p.y, p.z]).collect::<Vec<_>>(),
            "colors": cloud.colors,
        }))
        .into_response()),
        "binary" => Ok((
            [(
                header::CONTENT_TYPE,
                HeaderValue::from_static("application/octet-stream"),
            )],
            encode_cloud_binary(&cloud),
        )
            .into_response()),
        other => Err(ApiError::bad_request(format!("unknown format {other:?}"))),
    }
}

#[derive(Deserialize)]
struct PutTrajectory {
    keyframes: TrajectoryJson,
    n_frames: usize,
    /// When present, the write is rejected unless the stored version still matches.
    expected_version: Option<u64>,
}

fn trajectory_body(t: &TrajectoryState) -> Value {
    json!({
        "version": t.version,
        "n_frames": t.trajectory.len(),
        "keyframes": trajectory_json(&t.keyframes),
        "trajectory": trajectory_json(&t.trajectory),
    })
}

async fn put_trajectory(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let scene = st.scene(&id)?;
    let req: PutTrajectory = parse_body(&body)?;
    let keys = req
        .keyframes
        .to_trajectory()
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let keys = keys.to_camera_to_world();
    if keys.scale_space != ScaleSpace::Metric {
        return Err(ApiError::unprocessable("keyframes must be metric-scale"));
    }
    if !keys.is_canonical() {
        return Err(ApiError::unprocessable("first keyframe must be the identity pose"));
    }
    let trajectory = interpolate_keyframes(&keys, req.n_frames).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    let state = {
        let mut version = scene.version.lock().unwrap();
        if let Some(expected) = req.expected_version {
            if expected != *version {
                return Err(ApiError::conflict("trajectory was modified concurrently")
                    .with_detail(json!({"current_version": *version})));
            }
        }
        *version += 1;
        let state = TrajectoryState {
            version: *version,
            keyframes: keys,
            trajectory,
        };
        let stored = StoredTrajectory {
            version: state.version,
            n_frames: req.n_frames,
            keyframes: trajectory_json(&state.keyframes),
        };
        io::write_json(&scene.dir.join("trajectory.json"), &stored)?;
        *scene.trajectory.lock().unwrap() = Some(state.clone());
        state
    };
    Ok(Json(trajectory_body(&state)))
}

async fn get_trajectory(State(st): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<Value>> {
    let scene = st.scene(&id)?;
    let t = scene
        .trajectory()
        .ok_or_else(|| ApiError::not_found("scene has no trajectory"))?;
    Ok(Json(trajectory_body(&t)))
}

#[derive(Deserialize)]
struct FrameQuery {
    radius: Option<usize>,
    k: Option<usize>,
}

async fn rendered_frame(st: &AppState, id: &str, frame: usize, radius: usize) -> ApiResult<(u64, Arc<RenderedFrame>)> {
    let scene = st.scene(id)?;
    let state = scene
        .trajectory()
        .ok_or_else(|| ApiError::not_found("scene has no trajectory"))?;
    if frame >= state.trajectory.len() {
        return Err(ApiError::not_found(format!(
            "frame {frame} outside trajectory of {} frames",
            state.trajectory.len()
        )));
    }
    let version = state.version;
    let rendered = tokio::task::spawn_blocking(move || scene.preview_frame(&state, frame, radius))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    Ok((version, rendered))
}

fn binary(content_type: &'static str, version: u64, body: Vec<u8>) -> Response {
    (
        [
            (header::CONTENT_TYPE, HeaderValue::from_static(content_type)),
            (
                header::HeaderName::from_static("x-trajectory-version"),
                HeaderValue::from(version),
            ),
        ],
        body,
    )
        .into_response()
}

async fn preview(
    State(st): State<Arc<AppState>>,
    UrlPath((id, frame)): UrlPath<(String, usize)>,
    Query(q): Query<FrameQuery>,
) -> ApiResult<Response> {
    let (version, f) = rendered_frame(&st, &id, frame, q.radius.unwrap_or(DEFAULT_RADIUS)).await?;
    Ok(binary("image/png", version, io::encode_color_png(&f.color)?))
}

async fn mask(
    State(st): State<Arc<AppState>>,
    UrlPath((id, frame)): UrlPath<(String, usize)>,
    Query(q): Query<FrameQuery>,
) -> ApiResult<Response> {
    let kernel = q.k.unwrap_or(3);
    let (version, f) = rendered_frame(&st, &id, frame, q.radius.unwrap_or(DEFAULT_RADIUS)).await?;
    let m = shaping_mask(&f, kernel).map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(binary("image/x-portable-bitmap", version, io::encode_pbm(&m.mask)))
}

async fn start_shape(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let scene = st.scene(&id)?;
    let params: ShapeRequest = if body.is_empty() {
        parse_body(&Bytes::from_static(b"{}"))?
    } else {
        parse_body(&body)?
    };
    if params.t_ns > 1000 || params.steps == 0 || params.steps > 1000 {
        return Err(ApiError::unprocessable(
            "t_ns must be in [0, 1000] and steps in [1, 1000]",
        ));
    }
    if params.kernel.is_multiple_of(2) {
        return Err(ApiError::unprocessable("kernel must be odd"));
    }
    let state = scene
        .trajectory()
        .ok_or_else(|| ApiError::conflict("scene has no trajectory"))?;
    let job_id = uuid::Uuid::new_v4().simple().to_string();
    let job = Arc::new(Mutex::new(Job {
        id: job_id.clone(),
        scene_id: id,
        version: state.version,
        status: JobStatus::Queued,
        error: None,
        frames: Vec::new(),
        masked_rmse: None,
    }));
    st.jobs.lock().unwrap().insert(job_id.clone(), job.clone());
    st.job_tx
        .lock()
        .unwrap()
        .send(JobRequest {
            job,
            scene,
            trajectory: state.trajectory,
            params,
        })
        .map_err(|_| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "unavailable", "shaping worker stopped"))?;
    Ok((
        StatusCode::ACCEPTED,
        Json(json!({"job_id": job_id, "version": state.version})),
    ))
}

fn find_job(st: &AppState, scene: &str, job: &str) -> ApiResult<Arc<Mutex<Job>>> {
    st.jobs
        .lock()
        .unwrap()
        .get(job)
        .filter(|j| j.lock().unwrap().scene_id == scene)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown job {job}")))
}

async fn job_status(
    State(st): State<Arc<AppState>>,
    UrlPath((id, job)): UrlPath<(String, String)>,
) -> ApiResult<Json<Value>> {
    st.scene(&id)?;
    let job = find_job(&st, &id, &job)?;
    let j = job.lock().unwrap();
    Ok(Json(json!({
        "job_id": j.id,
        "scene_id": j.scene_id,
        "version": j.version,
        "status": j.status,
        "n_frames": j.frames.len(),
        "masked_rmse": j.masked_rmse,
        "error": j.error,
    })))
}

async fn job_frame(
    State(st): State<Arc<AppState>>,
    UrlPath((id, job, frame)): UrlPath<(String, String, usize)>,
) -> ApiResult<Response> {
    st.scene(&id)?;
    let job = find_job(&st, &id, &job)?;
    let j = job.lock().unwrap();
    if j.status != JobStatus::Done {
        return Err(ApiError::conflict("job is not complete").with_detail(json!({"status": j.status})));
    }
    let png = j
        .frames
        .get(frame)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("job has {} frames", j.frames.len())))?;
    Ok(binary("image/png", j.version, png))
}

async fn put_comparison(
    State(st): State<Arc<AppState>>,
    UrlPath((id, name)): UrlPath<(String, String)>,
    body: Bytes,
) -> ApiResult<StatusCode> {
    let scene = st.scene(&id)?;
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(ApiError::bad_request("comparison names use [A-Za-z0-9_-]"));
    }
    let doc: TrajectoryJson = parse_body(&body)?;
    let traj = doc
        .to_trajectory()
        .and_then(|t| canonicalize(&t.to_camera_to_world()))
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    io::write_trajectory(&scene.dir.join("comparisons").join(format!("{name}.json")), &traj)?;
    scene.comparisons.lock().unwrap().insert(name, traj);
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct MetricsQuery {
    against: String,
    mode: Option<String>,
}

async fn metrics(
    State(st): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<MetricsQuery>,
) -> ApiResult<Json<Value>> {
    let scene = st.scene(&id)?;
    let mode = match q.mode.as_deref().unwrap_or("both") {
        "relative" => EvalMode::Relative,
        "metric" => EvalMode::Metric,
        "both" => EvalMode::Both,
        other => return Err(ApiError::bad_request(format!("unknown mode {other:?}"))),
    };
    let gt = scene
        .trajectory()
        .ok_or_else(|| ApiError::not_found("scene has no trajectory"))?
        .trajectory;
    let gen = scene
        .comparisons
        .lock()
        .unwrap()
        .get(&q.against)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown comparison {:?}", q.against)))?;
    let report = TrajectoryPair::new(gt, gen).and_then(|p| evaluate(&p, mode))?;
    Ok(Json(serde_json::to_value(report).map_err(Error::from)?))
}
