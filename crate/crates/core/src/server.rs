//! Local HTTP API for curating candidates.
//!
//! ```text
//! GET  /api/project                  manifest summary
//! GET  /api/scenes                   curation state per scene
//! GET  /api/scenes/{i}/candidates    candidates with asset URLs
//! POST /api/scenes/{i}/selection     {"index": k}
//! POST /api/scenes/{i}/regenerate    {"count": n}
//! GET  /api/status                   stage progress
//! GET  /assets/...                   stored files
//! ```
//!
//! All mutations go through one mutex and are persisted before the response
//! is sent.

use std::collections::BTreeSet;
use std::net::{SocketAddr, TcpListener};
use std::sync::{Arc, Mutex};

use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::assets::ASSETS_DIR;
use crate::curation::{regenerate, select_candidate};
use crate::error::Error;
use crate::gateway::Gateway;
use crate::store::{CurationStatus, Project, SceneSpec, Stage};

struct Inner {
    project: Project,
    gateway: Gateway,
    generating: BTreeSet<usize>,
}

type Shared = Arc<Mutex<Inner>>;

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({"error": self.1}))).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::InvalidSelection(_) | Error::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            Error::Backend { .. } => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

type ApiResult = std::result::Result<Json<Value>, ApiError>;

fn asset_url(path: &str) -> String {
    format!("/{path}")
}

fn scene_json(scene: &SceneSpec, story_sentence: Option<&str>, generating: bool) -> Value {
    let status = if generating {
        CurationStatus::Generating
    } else {
        scene.status()
    };
    json!({
        "scene_index": scene.sentence_index,
        "sentence": story_sentence,
        "description": scene.description.as_ref().map(|d| &d.description_text),
        "prompt": scene.description.as_ref().map(|d| &d.augmented_prompt),
        "candidate_count": scene.candidates.len(),
        "failure_count": scene.failures.len(),
        "selected_index": scene.selected_index,
        "selected_hash": scene.selected().map(|c| &c.content_hash),
        "status": status,
        "rendered": scene.rendered.is_some(),
    })
}

fn scene_at(inner: &Inner, i: usize) -> std::result::Result<Value, ApiError> {
    let m = &inner.project.manifest;
    let scene = m
        .scenes
        .get(i)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no scene {i}")))?;
    let sentence = m.story.as_ref().and_then(|s| s.sentences.get(i)).map(|s| s.text.as_str());
    Ok(scene_json(scene, sentence, inner.generating.contains(&i)))
}

fn lock(state: &Shared) -> std::sync::MutexGuard<'_, Inner> {
    state.lock().unwrap_or_else(|p| p.into_inner())
}

fn status_json(inner: &Inner) -> Value {
    let m = &inner.project.manifest;
    let stages: serde_json::Map<String, Value> = Stage::ALL
        .iter()
        .map(|s| (s.to_string(), json!(m.status(*s))))
        .collect();
    let next = Stage::ALL.into_iter().find(|s| !m.is_done(*s));
    json!({
        "stages": stages,
        "next_stage": next,
        "scenes_selected": m.scenes.iter().filter(|s| s.selected_index.is_some()).count(),
        "scene_count": m.scenes.len(),
    })
}

async fn get_project(State(state): State<Shared>) -> ApiResult {
    let inner = lock(&state);
    let m = &inner.project.manifest;
    Ok(Json(json!({
        "request": m.request,
        "story": m.story.as_ref().map(|s| &s.full_text),
        "sentence_count": m.story.as_ref().map(|s| s.sentences.len()),
        "scene_count": m.scenes.len(),
        "total_duration": m.total_duration,
        "fingerprints": m.fingerprints,
        "render": m.render.as_ref().map(|r| asset_url(&r.video.path)),
        "status": status_json(&inner),
    })))
}

async fn get_status(State(state): State<Shared>) -> ApiResult {
    Ok(Json(status_json(&lock(&state))))
}

async fn get_scenes(State(state): State<Shared>) -> ApiResult {
    let inner = lock(&state);
    let scenes = (0..inner.project.manifest.scenes.len())
        .map(|i| scene_at(&inner, i))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(Json(Value::Array(scenes)))
}

async fn get_candidates(State(state): State<Shared>, UrlPath(i): UrlPath<usize>) -> ApiResult {
    let inner = lock(&state);
    let scene = inner
        .project
        .manifest
        .scenes
        .get(i)
        .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("no scene {i}")))?;
    let candidates: Vec<Value> = scene
        .candidates
        .iter()
        .zip(&scene.candidate_seeds)
        .enumerate()
        .map(|(k, (c, seed))| {
            json!({
                "index": k,
                "seed": seed,
                "content_hash": c.content_hash,
                "url": asset_url(&c.path),
                "width": c.width,
                "height": c.height,
                "nsfw": c.nsfw,
            })
        })
        .collect();
    Ok(Json(json!({
        "scene_index": i,
        "selected_index": scene.selected_index,
        "candidates": candidates,
    })))
}

#[derive(Deserialize)]
struct SelectionBody {
    index: usize,
}

async fn post_selection(
    State(state): State<Shared>,
    UrlPath(i): UrlPath<usize>,
    Json(body): Json<SelectionBody>,
) -> ApiResult {
    let mut inner = lock(&state);
    if i >= inner.project.manifest.scenes.len() {
        return Err(ApiError(StatusCode::NOT_FOUND, format!("no scene {i}")));
    }
    let changed = select_candidate(&mut inner.project.manifest, i, body.index)?;
    if changed {
        inner.project.save()?;
    }
    let mut scene = scene_at(&inner, i)?;
    scene["changed"] = json!(changed);
    Ok(Json(scene))
}

#[derive(Deserialize)]
struct RegenerateBody {
    count: usize,
}

async fn post_regenerate(
    State(state): State<Shared>,
    UrlPath(i): UrlPath<usize>,
    Json(body): Json<RegenerateBody>,
) -> ApiResult {
    {
        let mut inner = lock(&state);
        if i >= inner.project.manifest.scenes.len() {
            return Err(ApiError(StatusCode::NOT_FOUND, format!("no scene {i}")));
        }
        inner.generating.insert(i);
    }
    let worker = state.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        let mut guard = lock(&worker);
        let inner = &mut *guard;
        let parallelism = inner.project.manifest.config.parallelism;
        let result = regenerate(&mut inner.project.manifest, &inner.gateway, i, body.count, parallelism)
            .and_then(|out| inner.project.save().map(|_| out));
        inner.generating.remove(&i);
        result
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let inner = lock(&state);
    let mut scene = scene_at(&inner, i)?;
    scene["added"] = json!(outcome.added);
    scene["failures"] = json!(outcome.failures);
    Ok(Json(scene))
}

fn content_type(path: &str) -> &'static str {
    match path.rsplit('.').next() {
        Some("png") => "image/png",
        Some("wav") => "audio/wav",
        Some("mp4") => "video/mp4",
        Some("json") => "application/json",
        _ => "application/octet-stream",
    }
}

async fn get_asset(State(state): State<Shared>, UrlPath(rest): UrlPath<String>) -> Response {
    if rest.split('/').any(|part| part == ".." || part.is_empty()) {
        return StatusCode::BAD_REQUEST.into_response();
    }
    let root = lock(&state).project.root().join(ASSETS_DIR);
    match tokio::fs::read(root.join(&rest)).await {
        Ok(bytes) => ([(header::CONTENT_TYPE, content_type(&rest))], bytes).into_response(),
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/project", get(get_project))
        .route("/api/status", get(get_status))
        .route("/api/scenes", get(get_scenes))
        .route("/api/scenes/{i}/candidates", get(get_candidates))
        .route("/api/scenes/{i}/selection", post(post_selection))
        .route("/api/scenes/{i}/regenerate", post(post_regenerate))
        .route("/assets/{*path}", get(get_asset))
        .with_state(state)
}

/// Binds 127.0.0.1:`port`; a busy port is reported as a configuration error.
pub fn bind(port: u16) -> crate::error::Result<TcpListener> {
    let listener = TcpListener::bind(("127.0.0.1", port)).map_err(|e| {
        if e.kind() == std::io::ErrorKind::AddrInUse {
            Error::Config(format!("port {port} is already in use"))
        } else {
            Error::Config(format!("cannot listen on port {port}: {e}"))
        }
    })?;
    listener.set_nonblocking(true)?;
    Ok(listener)
}

/// A server running on a background thread.
pub struct CurationServer {
    addr: SocketAddr,
    state: Option<Shared>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl CurationServer {
    /// Serves `project` on `port` (0 picks a free port).
    pub fn start(project: Project, gateway: Gateway, port: u16) -> crate::error::Result<Self> {
        let listener = bind(port)?;
        let addr = listener.local_addr()?;
        let state: Shared = Arc::new(Mutex::new(Inner {
            project,
            gateway,
            generating: BTreeSet::new(),
        }));
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(state.clone());
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        tokio::select! {
                            _ = rx => {}
                            _ = tokio::signal::ctrl_c() => log::info!("interrupted, shutting down"),
                        }
                    })
                    .await
            })
        });
        Ok(Self {
            addr,
            state: Some(state),
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server is interrupted.
    pub fn wait(mut self) -> crate::error::Result<()> {
        if let Some(t) = self.thread.take() {
            t.join().map_err(|_| Error::Project("server thread panicked".into()))??;
        }
        Ok(())
    }

    /// Stops the server and hands back the project and gateway.
    pub fn stop(mut self) -> crate::error::Result<(Project, Gateway)> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            t.join().map_err(|_| Error::Project("server thread panicked".into()))??;
        }
        let state = self.state.take().expect("server state present until stop");
        let inner = Arc::try_unwrap(state)
            .map_err(|_| Error::Project("server state still in use".into()))?
            .into_inner()
            .unwrap_or_else(|p| p.into_inner());
        Ok((inner.project, inner.gateway))
    }
}
