//! Uniform access to the external generators.
//!
//! Every call is turned into a [`GenerationRequest`] whose hash covers the
//! backend kind, the canonical payload and the backend fingerprint. Results
//! are cached per project under that hash, identical concurrent requests are
//! coalesced, and transient failures are retried with exponential backoff.

mod cache;
pub mod mock;
pub mod process;
pub mod remote;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use cache::{Artifact, ResponseCache, SingleFlight, CACHE_DIR};

use crate::assets::{AssetStore, AudioAsset, ImageAsset, VideoAsset};
use crate::camera::CameraPath;
use crate::compose::EncodeSettings;
use crate::error::{BackendError, Error, Result};
use crate::hashing::hash_canonical;
use crate::media::Pcm;

pub const IMAGE_SIZES: [u32; 4] = [256, 512, 768, 1024];
/// Allowed slack between a music track and its separated stems.
pub const STEM_TOLERANCE_SECS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Text,
    Image,
    Tts,
    Music,
    VocalSeparation,
    DepthEffect,
}

impl BackendKind {
    pub const ALL: [BackendKind; 6] = [
        BackendKind::Text,
        BackendKind::Image,
        BackendKind::Tts,
        BackendKind::Music,
        BackendKind::VocalSeparation,
        BackendKind::DepthEffect,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Text => "text",
            BackendKind::Image => "image",
            BackendKind::Tts => "tts",
            BackendKind::Music => "music",
            BackendKind::VocalSeparation => "vocal_separation",
            BackendKind::DepthEffect => "depth_effect",
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Transport {
    RemoteService {
        url: String,
        /// Name of the environment variable holding a bearer token.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        auth_token_env: Option<String>,
    },
    LocalProcess {
        /// Command template with `{input}`, `{output}`, `{seed}` and `{payload}` placeholders.
        command: String,
    },
    Mock,
}

impl Transport {
    fn tag(&self) -> &'static str {
        match self {
            Transport::RemoteService { .. } => "remote",
            Transport::LocalProcess { .. } => "process",
            Transport::Mock => "mock",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub kind: BackendKind,
    pub transport: Transport,
    /// Model name and version; part of every cache key.
    pub model: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
}

impl BackendEndpoint {
    pub fn mock(kind: BackendKind) -> Self {
        Self {
            kind,
            transport: Transport::Mock,
            model: mock::MOCK_MODEL.to_string(),
            timeout_secs: 120.0,
            max_retries: 0,
            backoff_base_ms: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_secs > 0.0) {
            return Err(Error::Config(format!("{} endpoint timeout must be > 0", self.kind)));
        }
        if self.model.trim().is_empty() {
            return Err(Error::Config(format!("{} endpoint needs a model name", self.kind)));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        format!("{}:{}", self.transport.tag(), self.model)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub kind: BackendKind,
    pub payload: Value,
    pub request_hash: String,
}

impl GenerationRequest {
    pub fn new(kind: BackendKind, payload: Value, fingerprint: &str) -> Result<Self> {
        let request_hash = hash_canonical(&json!({
            "kind": kind,
            "payload": &payload,
            "fingerprint": fingerprint,
        }))?;
        Ok(Self {
            kind,
            payload,
            request_hash,
        })
    }

    pub fn seed(&self) -> u64 {
        self.payload.get("seed").and_then(Value::as_u64).unwrap_or(0)
    }

    pub fn str_field(&self, key: &str) -> std::result::Result<&str, BackendError> {
        self.payload
            .get(key)
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Malformed(format!("payload is missing `{key}`")))
    }

    pub fn f64_field(&self, key: &str) -> std::result::Result<f64, BackendError> {
        self.payload
            .get(key)
            .and_then(Value::as_f64)
            .ok_or_else(|| BackendError::Malformed(format!("payload is missing `{key}`")))
    }
}

/// One invocation handed to an adapter.
pub struct BackendCall<'a> {
    pub request: &'a GenerationRequest,
    /// Absolute paths of input files (music for separation, image for depth).
    pub inputs: &'a [PathBuf],
    pub timeout: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackendOutput {
    Text(String),
    Image { bytes: Vec<u8>, nsfw: Option<bool> },
    Audio(Vec<u8>),
    Stems { vocals: Vec<u8>, instruments: Vec<u8> },
    Video(Vec<u8>),
}

impl BackendOutput {
    fn describe(&self) -> &'static str {
        match self {
            BackendOutput::Text(_) => "text",
            BackendOutput::Image { .. } => "image",
            BackendOutput::Audio(_) => "audio",
            BackendOutput::Stems { .. } => "stems",
            BackendOutput::Video(_) => "video",
        }
    }
}

pub trait Backend: Send + Sync {
    fn invoke(&self, call: &BackendCall<'_>) -> std::result::Result<BackendOutput, BackendError>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallStats {
    /// Requests that reached the backend (cache misses).
    pub calls: u64,
    /// Individual attempts, including retries.
    pub attempts: u64,
    pub cache_hits: u64,
    pub failures: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextParams {
    pub max_tokens: u32,
    pub seed: u64,
}

/// Conditioning for the music generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type", content = "artist")]
pub enum MusicPreset {
    Artist(String),
    Unconditional,
}

impl MusicPreset {
    pub fn parse(s: &str) -> Self {
        match s.trim() {
            "" | "unconditional" => MusicPreset::Unconditional,
            artist => MusicPreset::Artist(artist.to_lowercase()),
        }
    }

    pub fn label(&self) -> &str {
        match self {
            MusicPreset::Artist(a) => a,
            MusicPreset::Unconditional => "unconditional",
        }
    }
}

struct Route {
    endpoint: BackendEndpoint,
    backend: Arc<dyn Backend>,
}

pub struct Gateway {
    store: AssetStore,
    cache: ResponseCache,
    routes: BTreeMap<BackendKind, Route>,
    stats: Mutex<BTreeMap<BackendKind, CallStats>>,
    flights: SingleFlight,
}

/// Exponential backoff delay before retry number `attempt` (1-based).
pub fn backoff_delay(base_ms: u64, attempt: u32) -> Duration {
    let factor = 1u64 << (attempt.saturating_sub(1)).min(16);
    Duration::from_millis(base_ms.saturating_mul(factor).min(60_000))
}

impl Gateway {
    pub fn new(store: AssetStore) -> Self {
        Self {
            cache: ResponseCache::new(store.clone()),
            store,
            routes: BTreeMap::new(),
            stats: Mutex::new(BTreeMap::new()),
            flights: SingleFlight::default(),
        }
    }

    /// Registers the adapter for one kind. A later registration for the same
    /// kind is rejected.
    pub fn register(&mut self, endpoint: BackendEndpoint, backend: Arc<dyn Backend>) -> Result<()> {
        endpoint.validate()?;
        if self.routes.contains_key(&endpoint.kind) {
            return Err(Error::Config(format!("more than one {} endpoint configured", endpoint.kind)));
        }
        self.routes.insert(endpoint.kind, Route { endpoint, backend });
        Ok(())
    }

    pub fn with_backend(mut self, endpoint: BackendEndpoint, backend: Arc<dyn Backend>) -> Result<Self> {
        self.register(endpoint, backend)?;
        Ok(self)
    }

    /// Builds adapters for the given endpoint definitions.
    pub fn from_endpoints(store: AssetStore, endpoints: &[BackendEndpoint], ffmpeg: &str) -> Result<Self> {
        let mut gateway = Gateway::new(store);
        for endpoint in endpoints {
            let backend: Arc<dyn Backend> = match &endpoint.transport {
                Transport::Mock => Arc::new(mock::MockBackend::new(endpoint.kind, ffmpeg)),
                Transport::RemoteService { url, auth_token_env } => Arc::new(remote::RemoteBackend::new(
                    endpoint.kind,
                    url,
                    &endpoint.model,
                    auth_token_env.as_deref(),
                )?),
                Transport::LocalProcess { command } => {
                    Arc::new(process::ProcessBackend::new(endpoint.kind, command)?)
                }
            };
            gateway.register(endpoint.clone(), backend)?;
        }
        Ok(gateway)
    }

    pub fn store(&self) -> &AssetStore {
        &self.store
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn has_backend(&self, kind: BackendKind) -> bool {
        self.routes.contains_key(&kind)
    }

    pub fn endpoint(&self, kind: BackendKind) -> Option<&BackendEndpoint> {
        self.routes.get(&kind).map(|r| &r.endpoint)
    }

    pub fn fingerprints(&self) -> BTreeMap<BackendKind, String> {
        self.routes
            .iter()
            .map(|(k, r)| (*k, r.endpoint.fingerprint()))
            .collect()
    }

    pub fn stats(&self) -> BTreeMap<BackendKind, CallStats> {
        self.stats.lock().expect("stats poisoned").clone()
    }

    /// Sum of backend calls (cache misses) across kinds.
    pub fn total_calls(&self) -> u64 {
        self.stats().values().map(|s| s.calls).sum()
    }

    pub fn reset_stats(&self) {
        self.stats.lock().expect("stats poisoned").clear();
    }

    fn bump(&self, kind: BackendKind, f: impl FnOnce(&mut CallStats)) {
        f(self.stats.lock().expect("stats poisoned").entry(kind).or_default());
    }

    fn route(&self, kind: BackendKind) -> Result<&Route> {
        self.routes
            .get(&kind)
            .ok_or_else(|| Error::Config(format!("no {kind} backend configured")))
    }

    /// Looks up or produces the artifact for a request.
    fn execute(
        &self,
        kind: BackendKind,
        payload: Value,
        inputs: &[PathBuf],
        materialize: impl FnOnce(BackendOutput) -> Result<Artifact>,
    ) -> Result<Artifact> {
        let route = self.route(kind)?;
        let request = GenerationRequest::new(kind, payload, &route.endpoint.fingerprint())?;
        let flight = self.flights.key(&request.request_hash);
        let _guard = flight.lock().expect("single-flight lock poisoned");

        if let Some(hit) = self.cache.lookup(&request.request_hash) {
            debug!("{kind} cache hit {}", request.request_hash);
            self.bump(kind, |s| s.cache_hits += 1);
            return Ok(hit);
        }

        self.bump(kind, |s| s.calls += 1);
        let call = BackendCall {
            request: &request,
            inputs,
            timeout: route.endpoint.timeout(),
        };
        let mut attempts = 0u32;
        let output = loop {
            attempts += 1;
            self.bump(kind, |s| s.attempts += 1);
            match route.backend.invoke(&call) {
                Ok(out) => break out,
                Err(e) if e.is_transient() && attempts <= route.endpoint.max_retries => {
                    let delay = backoff_delay(route.endpoint.backoff_base_ms, attempts);
                    warn!("{kind} attempt {attempts} failed ({e}); retrying in {delay:?}");
                    std::thread::sleep(delay);
                }
                Err(source) => {
                    self.bump(kind, |s| s.failures += 1);
                    return Err(Error::Backend {
                        kind,
                        request_hash: request.request_hash.clone(),
                        attempts,
                        source,
                    });
                }
            }
        };

        let artifact = materialize(output).map_err(|e| match e {
            Error::CorruptAsset { reason, .. } => Error::CorruptAsset {
                path: format!("<{kind} response for {}>", request.request_hash).into(),
                reason,
            },
            e => e,
        })?;
        self.cache.store(&request.request_hash, kind.as_str(), &artifact)?;
        Ok(artifact)
    }

    pub fn complete_text(&self, prompt: &str, params: &TextParams) -> Result<String> {
        let payload = json!({
            "prompt": prompt,
            "max_tokens": params.max_tokens,
            "seed": params.seed,
        });
        match self.execute(BackendKind::Text, payload, &[], |out| match out {
            BackendOutput::Text(text) => Ok(Artifact::Text { text }),
            other => Err(unexpected(BackendKind::Text, &other)),
        })? {
            Artifact::Text { text } => Ok(text),
            other => Err(cache_kind_mismatch(BackendKind::Text, &other)),
        }
    }

    pub fn generate_image(&self, prompt: &str, seed: u64, width: u32, height: u32) -> Result<ImageAsset> {
        if !IMAGE_SIZES.contains(&width) || !IMAGE_SIZES.contains(&height) {
            return Err(Error::Contract(format!(
                "image size {width}x{height} not in {IMAGE_SIZES:?}"
            )));
        }
        let payload = json!({
            "prompt": prompt,
            "seed": seed,
            "width": width,
            "height": height,
        });
        let store = &self.store;
        match self.execute(BackendKind::Image, payload, &[], |out| match out {
            BackendOutput::Image { bytes, nsfw } => Ok(Artifact::Image {
                image: store.put_image(&bytes, nsfw)?,
            }),
            other => Err(unexpected(BackendKind::Image, &other)),
        })? {
            Artifact::Image { image } => Ok(image),
            other => Err(cache_kind_mismatch(BackendKind::Image, &other)),
        }
    }

    /// `length_scale` multiplies speech duration: 2.0 is twice as slow.
    pub fn synthesize_speech(&self, text: &str, voice: &str, length_scale: f64, seed: u64) -> Result<AudioAsset> {
        if text.trim().is_empty() {
            return Err(Error::Contract("speech text is empty".into()));
        }
        if !(0.5..=3.0).contains(&length_scale) {
            return Err(Error::Contract(format!("length_scale {length_scale} outside [0.5, 3.0]")));
        }
        let payload = json!({
            "text": text,
            "voice": voice,
            "length_scale": length_scale,
            "seed": seed,
        });
        self.audio_call(BackendKind::Tts, payload, &[])
    }

    pub fn generate_music(&self, preset: &MusicPreset, target_duration: f64, seed: u64) -> Result<AudioAsset> {
        if !(10.0..=600.0).contains(&target_duration) {
            return Err(Error::Contract(format!(
                "music duration {target_duration}s outside [10, 600]"
            )));
        }
        let payload = json!({
            "preset": preset.label(),
            "duration": target_duration,
            "seed": seed,
        });
        let asset = self.audio_call(BackendKind::Music, payload, &[])?;
        let floor = target_duration.min(60.0);
        if asset.duration + 1e-6 < floor {
            warn!(
                "music backend returned {:.2}s, shorter than {floor:.2}s; it will be looped",
                asset.duration
            );
        }
        Ok(asset)
    }

    fn audio_call(&self, kind: BackendKind, payload: Value, inputs: &[PathBuf]) -> Result<AudioAsset> {
        let store = &self.store;
        match self.execute(kind, payload, inputs, |out| match out {
            BackendOutput::Audio(bytes) => Ok(Artifact::Audio {
                audio: store.put_audio(&bytes)?,
            }),
            other => Err(unexpected(kind, &other)),
        })? {
            Artifact::Audio { audio } => Ok(audio),
            other => Err(cache_kind_mismatch(kind, &other)),
        }
    }

    /// Returns `(vocals, instruments)`.
    pub fn separate_vocals(&self, music: &AudioAsset) -> Result<(AudioAsset, AudioAsset)> {
        let payload = json!({ "input_hash": music.content_hash });
        let inputs = [self.store.abs(&music.path)];
        let store = &self.store;
        let expected = music.duration;
        let artifact = self.execute(BackendKind::VocalSeparation, payload, &inputs, |out| match out {
            BackendOutput::Stems { vocals, instruments } => {
                let vocals = store.put_audio(&vocals)?;
                let instruments = store.put_audio(&instruments)?;
                for (name, stem) in [("vocals", &vocals), ("instruments", &instruments)] {
                    if (stem.duration - expected).abs() > STEM_TOLERANCE_SECS {
                        return Err(Error::CorruptAsset {
                            path: stem.path.clone().into(),
                            reason: format!(
                                "{name} stem lasts {:.3}s, input lasts {expected:.3}s",
                                stem.duration
                            ),
                        });
                    }
                }
                Ok(Artifact::Stems { vocals, instruments })
            }
            other => Err(unexpected(BackendKind::VocalSeparation, &other)),
        })?;
        match artifact {
            Artifact::Stems { vocals, instruments } => Ok((vocals, instruments)),
            other => Err(cache_kind_mismatch(BackendKind::VocalSeparation, &other)),
        }
    }

    pub fn apply_depth_effect(
        &self,
        image: &ImageAsset,
        path: &CameraPath,
        frames: u64,
        fps: u32,
        encode: &EncodeSettings,
    ) -> Result<VideoAsset> {
        let payload = json!({
            "image_hash": image.content_hash,
            "camera_path": path,
            "frames": frames,
            "fps": fps,
            "encode": encode,
        });
        let inputs = [self.store.abs(&image.path)];
        let store = &self.store;
        match self.execute(BackendKind::DepthEffect, payload, &inputs, |out| match out {
            BackendOutput::Video(bytes) => Ok(Artifact::Video {
                video: store.put_video(&bytes)?,
            }),
            other => Err(unexpected(BackendKind::DepthEffect, &other)),
        })? {
            Artifact::Video { video } => Ok(video),
            other => Err(cache_kind_mismatch(BackendKind::DepthEffect, &other)),
        }
    }
}

fn unexpected(kind: BackendKind, out: &BackendOutput) -> Error {
    Error::CorruptAsset {
        path: format!("<{kind} response>").into(),
        reason: format!("{kind} backend returned {} output", out.describe()),
    }
}

fn cache_kind_mismatch(kind: BackendKind, artifact: &Artifact) -> Error {
    Error::Contract(format!("cached artifact for {kind} request has unexpected shape: {artifact:?}"))
}

/// Silence with the same shape as `wav`.
pub(crate) fn silent_twin(wav: &[u8]) -> std::result::Result<Vec<u8>, BackendError> {
    let pcm = Pcm::decode_wav(wav).map_err(|e| BackendError::Malformed(e.to_string()))?;
    Ok(Pcm {
        sample_rate: pcm.sample_rate,
        channels: pcm.channels,
        samples: vec![0.0; pcm.samples.len()],
    }
    .encode_wav())
}
