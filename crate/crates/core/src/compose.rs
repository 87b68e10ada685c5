//! Scene composition: still image + camera path -> video clip.
//!
//! The native path computes every frame's crop in Rust and hands ffmpeg a
//! zoompan filter whose zoom and offsets are lookup trees over the output
//! frame number, so the clip is a pure function of its inputs.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::assets::{ImageAsset, VideoAsset};
use crate::camera::{frame_plan, CameraPath};
use crate::error::{Error, Result};
use crate::gateway::{Artifact, BackendKind, Gateway};
use crate::hashing::{hash_canonical, sha256_hex};
use crate::media::{probe_bytes, MediaInfo};
use crate::tool;

/// Bumped whenever the generated filter graph changes shape.
pub const RENDERER_VERSION: &str = "zoompan-lut/1";
pub const DEFAULT_FPS: u32 = 25;
pub const WORK_DIR: &str = "tmp";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodeSettings {
    pub width: u32,
    pub height: u32,
    pub codec: String,
    pub crf: u32,
    pub preset: String,
}

impl Default for EncodeSettings {
    fn default() -> Self {
        Self {
            width: 1280,
            height: 720,
            codec: "libx264".into(),
            crf: 20,
            preset: "medium".into(),
        }
    }
}

impl EncodeSettings {
    fn args(&self) -> Vec<String> {
        [
            "-c:v",
            &self.codec,
            "-crf",
            &self.crf.to_string(),
            "-preset",
            &self.preset,
            "-pix_fmt",
            "yuv420p",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComposeMode {
    #[default]
    Native2d,
    DepthBackend,
}

#[derive(Debug, Clone)]
pub struct ComposeOptions {
    pub mode: ComposeMode,
    /// Fall back to the native renderer when the depth backend fails.
    pub fallback: bool,
    pub encode: EncodeSettings,
    pub ffmpeg: String,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        Self {
            mode: ComposeMode::Native2d,
            fallback: true,
            encode: EncodeSettings::default(),
            ffmpeg: "ffmpeg".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComposedScene {
    pub video: VideoAsset,
    pub mode: ComposeMode,
    /// Command lines that produced the clip, in order.
    pub commands: Vec<String>,
}

pub fn frames_for(duration: f64, fps: u32) -> u64 {
    (duration * fps as f64).round().max(1.0) as u64
}

/// Largest even-sized box with the source aspect ratio that fits the output.
pub fn fit_within(src_w: u32, src_h: u32, out_w: u32, out_h: u32) -> (u32, u32) {
    let scale = (out_w as f64 / src_w as f64).min(out_h as f64 / src_h as f64);
    let even = |v: f64, max: u32| (((v / 2.0).floor() * 2.0) as u32).clamp(2, max);
    (even(src_w as f64 * scale, out_w), even(src_h as f64 * scale, out_h))
}

/// Balanced `if(lt(var, k), ...)` tree selecting `values[var]`.
fn lookup_tree(var: &str, values: &[String]) -> String {
    fn build(out: &mut String, var: &str, values: &[String], lo: usize, hi: usize) {
        if hi - lo == 1 {
            out.push_str(&values[lo]);
            return;
        }
        let mid = (lo + hi) / 2;
        let _ = write!(out, "if(lt({var}\\,{mid})\\,");
        build(out, var, values, lo, mid);
        out.push_str("\\,");
        build(out, var, values, mid, hi);
        out.push(')');
    }
    let mut out = String::new();
    build(&mut out, var, values, 0, values.len());
    out
}

/// Filter graph that renders `frames` frames of `path` over an image of the given size.
pub fn native_filter_graph(
    image_size: (u32, u32),
    path: &CameraPath,
    frames: u64,
    fps: u32,
    encode: &EncodeSettings,
) -> Result<String> {
    let (iw, ih) = image_size;
    if iw == 0 || ih == 0 {
        return Err(Error::Contract("image dimensions must be positive".into()));
    }
    if frames == 0 {
        return Err(Error::Contract("a scene needs at least one frame".into()));
    }
    let plan = frame_plan(path, iw, ih, frames)?;
    // zoompan derives the crop width as iw/zoom; the half pixel keeps its
    // truncation from landing one pixel short of the planned width.
    let zooms: Vec<String> = plan
        .iter()
        .map(|(r, _)| format!("{:.9}", iw as f64 / (r.w as f64 + 0.5)))
        .collect();
    let xs: Vec<String> = plan.iter().map(|(r, _)| r.x.to_string()).collect();
    let ys: Vec<String> = plan.iter().map(|(r, _)| r.y.to_string()).collect();
    let (fw, fh) = fit_within(iw, ih, encode.width, encode.height);
    let mut graph = format!(
        "[0:v]zoompan=z='{}':x='{}':y='{}':d={frames}:s={fw}x{fh}:fps={fps}",
        lookup_tree("on", &zooms),
        lookup_tree("on", &xs),
        lookup_tree("on", &ys),
    );
    if path.has_rotation() {
        let angles: Vec<String> = plan.iter().map(|(_, deg)| format!("{:.9}", deg.to_radians())).collect();
        let _ = write!(graph, ",rotate=a='{}':c=black", lookup_tree("n", &angles));
    }
    let _ = write!(
        graph,
        ",pad={}:{}:{}:{}:black,setsar=1,format=yuv420p[v]",
        encode.width,
        encode.height,
        (encode.width - fw) / 2,
        (encode.height - fh) / 2
    );
    Ok(graph)
}

/// ffmpeg arguments for a native render, relative to the working directory.
pub fn native_command(image_rel: &str, graph_rel: &str, frames: u64, encode: &EncodeSettings, out_rel: &str) -> Vec<String> {
    let mut args: Vec<String> = ["-hide_banner", "-nostdin", "-v", "error", "-y", "-i", image_rel, "-/filter_complex", graph_rel, "-map", "[v]"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    args.extend(["-frames:v".to_string(), frames.to_string()]);
    args.extend(encode.args());
    args.extend(tool::BITEXACT.iter().map(|s| s.to_string()));
    args.extend(["-map_metadata", "-1", out_rel].iter().map(|s| s.to_string()));
    args
}

/// Renders a Ken Burns clip with ffmpeg inside `workdir` and returns the
/// command transcript. Paths are relative to `workdir`.
#[allow(clippy::too_many_arguments)]
pub fn render_native(
    ffmpeg: &str,
    workdir: &Path,
    image_rel: &str,
    image_size: (u32, u32),
    path: &CameraPath,
    frames: u64,
    fps: u32,
    encode: &EncodeSettings,
    out_rel: &str,
) -> Result<String> {
    let graph = native_filter_graph(image_size, path, frames, fps, encode)?;
    let graph_rel = format!("{out_rel}.filter");
    std::fs::write(workdir.join(&graph_rel), &graph)?;
    let args = native_command(image_rel, &graph_rel, frames, encode, out_rel);
    let result = tool::run(ffmpeg, &args, workdir);
    let _ = std::fs::remove_file(workdir.join(&graph_rel));
    result?;
    Ok(format!("{} # filter sha256 {}", tool::transcript(ffmpeg, &args), sha256_hex(graph.as_bytes())))
}

fn check_inputs(duration: f64, fps: u32) -> Result<()> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::Contract(format!("scene duration must be positive, got {duration}")));
    }
    if !(10..=60).contains(&fps) {
        return Err(Error::Contract(format!("fps {fps} outside [10, 60]")));
    }
    Ok(())
}

fn render_key(image: &ImageAsset, path: &CameraPath, frames: u64, fps: u32, extra: serde_json::Value) -> Result<String> {
    hash_canonical(&json!({
        "renderer": RENDERER_VERSION,
        "image": image.content_hash,
        "camera_path": path,
        "frames": frames,
        "fps": fps,
        "extra": extra,
    }))
}

/// Native render through the project's response cache. Returns the stored
/// clip and the command that made it (also reported on cache hits).
pub fn compose_native(
    gateway: &Gateway,
    image: &ImageAsset,
    path: &CameraPath,
    frames: u64,
    fps: u32,
    opts: &ComposeOptions,
) -> Result<(VideoAsset, String)> {
    let key = render_key(image, path, frames, fps, json!({"encode": opts.encode}))?;
    let store = gateway.store();
    let out_rel = format!("{WORK_DIR}/{key}.mp4");
    let graph = native_filter_graph((image.width, image.height), path, frames, fps, &opts.encode)?;
    let command = format!(
        "{} # filter sha256 {}",
        tool::transcript(&opts.ffmpeg, &native_command(&image.path, &format!("{out_rel}.filter"), frames, &opts.encode, &out_rel)),
        sha256_hex(graph.as_bytes())
    );
    if let Some(Artifact::Video { video }) = gateway.cache().lookup(&key) {
        return Ok((video, command));
    }
    std::fs::create_dir_all(store.abs(WORK_DIR))?;
    let transcript = render_native(
        &opts.ffmpeg,
        store.root(),
        &image.path,
        (image.width, image.height),
        path,
        frames,
        fps,
        &opts.encode,
        &out_rel,
    )?;
    debug_assert_eq!(transcript, command);
    let bytes = std::fs::read(store.abs(&out_rel))?;
    let _ = std::fs::remove_file(store.abs(&out_rel));
    let video = store.put_video(&bytes)?;
    gateway.cache().store(&key, "render", &Artifact::Video { video: video.clone() })?;
    Ok((video, command))
}

/// Re-times and resizes a backend clip to exactly `frames` frames at the
/// output size, padding with the last frame when short.
pub fn conform_clip(gateway: &Gateway, clip: &VideoAsset, frames: u64, fps: u32, opts: &ComposeOptions) -> Result<(VideoAsset, Option<String>)> {
    let e = &opts.encode;
    if clip.frames == frames && clip.width == e.width && clip.height == e.height && (clip.fps - fps as f64).abs() < 1e-6 {
        return Ok((clip.clone(), None));
    }
    let store = gateway.store();
    let key = hash_canonical(&json!({"conform": clip.content_hash, "frames": frames, "fps": fps, "encode": e}))?;
    let out_rel = format!("{WORK_DIR}/{key}.mp4");
    let filter = format!(
        "scale={w}:{h}:force_original_aspect_ratio=decrease,pad={w}:{h}:(ow-iw)/2:(oh-ih)/2:black,setsar=1,fps={fps},tpad=stop_mode=clone:stop={frames},format=yuv420p",
        w = e.width,
        h = e.height
    );
    let mut args: Vec<String> = ["-hide_banner", "-nostdin", "-v", "error", "-y", "-i", &clip.path, "-vf", &filter, "-an"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    args.extend(["-frames:v".to_string(), frames.to_string()]);
    args.extend(e.args());
    args.extend(tool::BITEXACT.iter().map(|s| s.to_string()));
    args.extend(["-map_metadata", "-1", &out_rel].iter().map(|s| s.to_string()));
    std::fs::create_dir_all(store.abs(WORK_DIR))?;
    tool::run(&opts.ffmpeg, &args, store.root())?;
    let bytes = std::fs::read(store.abs(&out_rel))?;
    let _ = std::fs::remove_file(store.abs(&out_rel));
    Ok((store.put_video(&bytes)?, Some(tool::transcript(&opts.ffmpeg, &args))))
}

/// Renders one scene clip of `round(duration * fps)` frames.
pub fn compose_scene(
    gateway: &Gateway,
    image: &ImageAsset,
    path: &CameraPath,
    duration: f64,
    fps: u32,
    opts: &ComposeOptions,
) -> Result<ComposedScene> {
    check_inputs(duration, fps)?;
    compose_scene_frames(gateway, image, path, frames_for(duration, fps), fps, opts)
}

/// Like [`compose_scene`] with an explicit frame count.
pub fn compose_scene_frames(
    gateway: &Gateway,
    image: &ImageAsset,
    path: &CameraPath,
    frames: u64,
    fps: u32,
    opts: &ComposeOptions,
) -> Result<ComposedScene> {
    check_inputs(frames as f64 / fps as f64, fps)?;
    path.validate()?;
    if opts.mode == ComposeMode::DepthBackend {
        let attempt = if gateway.has_backend(BackendKind::DepthEffect) {
            gateway
                .apply_depth_effect(image, path, frames, fps, &opts.encode)
                .and_then(|clip| conform_clip(gateway, &clip, frames, fps, opts))
        } else {
            Err(Error::Config("no depth-effect backend configured".into()))
        };
        match attempt {
            Ok((video, conform)) => {
                return Ok(ComposedScene {
                    video,
                    mode: ComposeMode::DepthBackend,
                    commands: conform.into_iter().collect(),
                })
            }
            Err(e) if opts.fallback => {
                log::warn!("depth effect unavailable for {}, using the native renderer: {e}", image.content_hash);
            }
            Err(e) => return Err(e),
        }
    }
    let (video, command) = compose_native(gateway, image, path, frames, fps, opts)?;
    Ok(ComposedScene {
        video,
        mode: ComposeMode::Native2d,
        commands: vec![command],
    })
}

/// Dimensions of a stored image, read from its bytes.
pub fn image_size(bytes: &[u8]) -> Result<(u32, u32)> {
    match probe_bytes(bytes) {
        Ok(MediaInfo::Image { width, height }) => Ok((width, height)),
        Ok(other) => Err(Error::Contract(format!("expected an image, got {other:?}"))),
        Err(reason) => Err(Error::Contract(reason)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::default_camera_path;

    #[test]
    fn fit_preserves_aspect() {
        assert_eq!(fit_within(512, 512, 1280, 720), (720, 720));
        assert_eq!(fit_within(1920, 1080, 1280, 720), (1280, 720));
        assert_eq!(fit_within(1000, 300, 1280, 720), (1280, 384));
    }

    #[test]
    fn lookup_tree_shape() {
        let v: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        assert_eq!(lookup_tree("on", &v[..1]), "a");
        assert_eq!(lookup_tree("on", &v), "if(lt(on\\,1)\\,a\\,if(lt(on\\,2)\\,b\\,c))");
    }

    #[test]
    fn graph_is_deterministic() {
        let p = default_camera_path(0);
        let e = EncodeSettings::default();
        let a = native_filter_graph((512, 512), &p, 100, 25, &e).unwrap();
        assert_eq!(a, native_filter_graph((512, 512), &p, 100, 25, &e).unwrap());
        assert!(a.contains("d=100:s=720x720:fps=25"));
        assert!(a.ends_with("pad=1280:720:280:0:black,setsar=1,format=yuv420p[v]"));
        assert!(!a.contains("rotate"));
    }

    #[test]
    fn frame_counts_round() {
        assert_eq!(frames_for(4.0, 25), 100);
        assert_eq!(frames_for(2.019, 25), 50);
        assert!(check_inputs(0.0, 25).is_err());
        assert!(check_inputs(1.0, 61).is_err());
    }
}
