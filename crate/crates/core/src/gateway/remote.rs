//! HTTP adapters.
//!
//! Wire shapes:
//! - text: `POST {model, prompt, max_tokens, seed}`, reply `{text}` or
//!   completions-style `{choices: [{text}]}`
//! - image: `POST {prompt, seed, width, height}`, reply `{images: [base64 png]}`
//!   with an optional `nsfw` or `nsfw_content_detected` flag
//! - tts: `POST ?voice=..&lengthScale=..` with the text as body, reply WAV bytes
//! - music: `POST {preset, duration, seed}`, reply WAV bytes
//! - vocal separation: `POST` WAV bytes, reply `{vocals, instruments}` as base64 WAV
//! - depth effect: `POST {image, camera_path, frames, fps, encode}`, reply MP4 bytes

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use reqwest::blocking::{Client, RequestBuilder, Response};
use serde_json::{json, Value};

use super::{Backend, BackendCall, BackendKind, BackendOutput};
use crate::error::{BackendError, Error, Result};

pub struct RemoteBackend {
    kind: BackendKind,
    url: String,
    model: String,
    token: Option<String>,
    client: Client,
}

impl RemoteBackend {
    /// Reads the bearer token from `auth_token_env` when given.
    pub fn new(kind: BackendKind, url: &str, model: &str, auth_token_env: Option<&str>) -> Result<Self> {
        let token = match auth_token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::Config(format!("environment variable {var} for the {kind} backend token is not set"))
            })?),
            None => None,
        };
        let client = Client::builder()
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        Ok(Self {
            kind,
            url: url.to_string(),
            model: model.to_string(),
            token,
            client,
        })
    }

    fn authorized(&self, builder: RequestBuilder) -> RequestBuilder {
        match &self.token {
            Some(token) => builder.bearer_auth(token),
            None => builder,
        }
    }

    fn send(&self, builder: RequestBuilder, call: &BackendCall<'_>) -> Result<Response, BackendError> {
        let response = self
            .authorized(builder)
            .timeout(call.timeout)
            .send()
            .map_err(classify_transport)?;
        let status = response.status();
        if status.is_success() {
            return Ok(response);
        }
        let body = response.text().unwrap_or_default();
        let detail = format!("HTTP {status}: {}", body.chars().take(300).collect::<String>());
        Err(match status.as_u16() {
            401 | 403 => BackendError::Auth(detail),
            408 | 429 | 500..=599 => BackendError::Transient(detail),
            _ => BackendError::Failed(detail),
        })
    }

    fn json_reply(&self, response: Response) -> Result<Value, BackendError> {
        response
            .json::<Value>()
            .map_err(|e| BackendError::Malformed(format!("invalid JSON reply: {e}")))
    }

    fn bytes_reply(&self, response: Response) -> Result<Vec<u8>, BackendError> {
        response
            .bytes()
            .map(|b| b.to_vec())
            .map_err(classify_transport)
    }
}

fn classify_transport(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else if e.is_connect() || e.is_request() {
        BackendError::Transient(e.to_string())
    } else {
        BackendError::Failed(e.to_string())
    }
}

fn b64_field(value: &Value, key: &str) -> Result<Vec<u8>, BackendError> {
    let encoded = value
        .get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed(format!("reply is missing `{key}`")))?;
    B64.decode(encoded)
        .map_err(|e| BackendError::Malformed(format!("`{key}` is not base64: {e}")))
}

/// Extracts completion text from `{text}` or `{choices: [{text}]}`.
pub fn parse_text_reply(value: &Value) -> Result<String, BackendError> {
    value
        .get("text")
        .and_then(Value::as_str)
        .or_else(|| value.pointer("/choices/0/text").and_then(Value::as_str))
        .map(str::to_string)
        .ok_or_else(|| BackendError::Malformed("reply has neither `text` nor `choices[0].text`".into()))
}

/// Extracts the first image and the safety flag from a txt2img reply.
pub fn parse_image_reply(value: &Value) -> Result<(Vec<u8>, Option<bool>), BackendError> {
    let first = value
        .pointer("/images/0")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("reply has no `images[0]`".into()))?;
    let bytes = B64
        .decode(first)
        .map_err(|e| BackendError::Malformed(format!("image is not base64: {e}")))?;
    let nsfw = value
        .get("nsfw")
        .and_then(Value::as_bool)
        .or_else(|| value.pointer("/nsfw_content_detected/0").and_then(Value::as_bool));
    Ok((bytes, nsfw))
}

impl Backend for RemoteBackend {
    fn invoke(&self, call: &BackendCall<'_>) -> Result<BackendOutput, BackendError> {
        let req = call.request;
        let p = &req.payload;
        match self.kind {
            BackendKind::Text => {
                let body = json!({
                    "model": self.model,
                    "prompt": p["prompt"],
                    "max_tokens": p["max_tokens"],
                    "seed": p["seed"],
                });
                let reply = self.send(self.client.post(&self.url).json(&body), call)?;
                Ok(BackendOutput::Text(parse_text_reply(&self.json_reply(reply)?)?))
            }
            BackendKind::Image => {
                let body = json!({
                    "prompt": p["prompt"],
                    "seed": p["seed"],
                    "width": p["width"],
                    "height": p["height"],
                });
                let reply = self.send(self.client.post(&self.url).json(&body), call)?;
                let (bytes, nsfw) = parse_image_reply(&self.json_reply(reply)?)?;
                Ok(BackendOutput::Image { bytes, nsfw })
            }
            BackendKind::Tts => {
                let length_scale = req.f64_field("length_scale")?.to_string();
                let builder = self
                    .client
                    .post(&self.url)
                    .query(&[("voice", req.str_field("voice")?), ("lengthScale", length_scale.as_str())])
                    .header(reqwest::header::CONTENT_TYPE, "text/plain; charset=utf-8")
                    .body(req.str_field("text")?.to_string());
                let reply = self.send(builder, call)?;
                Ok(BackendOutput::Audio(self.bytes_reply(reply)?))
            }
            BackendKind::Music => {
                let reply = self.send(self.client.post(&self.url).json(p), call)?;
                Ok(BackendOutput::Audio(self.bytes_reply(reply)?))
            }
            BackendKind::VocalSeparation => {
                let input = call
                    .inputs
                    .first()
                    .ok_or_else(|| BackendError::Malformed("separation needs an input track".into()))?;
                let wav = std::fs::read(input).map_err(|e| BackendError::Failed(e.to_string()))?;
                let builder = self
                    .client
                    .post(&self.url)
                    .header(reqwest::header::CONTENT_TYPE, "audio/wav")
                    .body(wav);
                let reply = self.json_reply(self.send(builder, call)?)?;
                Ok(BackendOutput::Stems {
                    vocals: b64_field(&reply, "vocals")?,
                    instruments: b64_field(&reply, "instruments")?,
                })
            }
            BackendKind::DepthEffect => {
                let input = call
                    .inputs
                    .first()
                    .ok_or_else(|| BackendError::Malformed("depth effect needs an input image".into()))?;
                let png = std::fs::read(input).map_err(|e| BackendError::Failed(e.to_string()))?;
                let body = json!({
                    "image": B64.encode(png),
                    "camera_path": p["camera_path"],
                    "frames": p["frames"],
                    "fps": p["fps"],
                    "encode": p["encode"],
                });
                let reply = self.send(self.client.post(&self.url).json(&body), call)?;
                Ok(BackendOutput::Video(self.bytes_reply(reply)?))
            }
        }
    }
}
