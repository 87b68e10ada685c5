//! Final assembly: scene concatenation, audio binding and subtitles.

use std::fmt::Write as _;
use std::path::Path;

use crate::assets::{write_atomic, AssetStore, AudioAsset, VideoAsset};
use crate::error::{Error, Result};
use crate::hashing::sha256_hex;
use crate::media::{probe_bytes, MediaInfo};
use crate::story::Story;
use crate::timeline::SpeechSegment;
use crate::tool;

pub use crate::media::probe_asset;

pub const RENDERS_DIR: &str = "renders";
/// Allowed gap between the mix and the summed scene durations.
pub const AUDIO_TOLERANCE_SECS: f64 = 0.5;

/// Checks that the scenes can be concatenated without re-encoding and that
/// the audio covers them.
pub fn check_render_inputs(scenes: &[VideoAsset], audio: &AudioAsset) -> Result<()> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::Contract("nothing to render: no scenes".into()))?;
    for (i, s) in scenes.iter().enumerate() {
        if (s.width, s.height) != (first.width, first.height) {
            return Err(Error::Contract(format!(
                "scene {i} is {}x{}, scene 0 is {}x{}",
                s.width, s.height, first.width, first.height
            )));
        }
        if (s.fps - first.fps).abs() > 1e-6 {
            return Err(Error::Contract(format!("scene {i} runs at {} fps, scene 0 at {}", s.fps, first.fps)));
        }
    }
    let video: f64 = scenes.iter().map(|s| s.duration).sum();
    if (audio.duration - video).abs() > AUDIO_TOLERANCE_SECS {
        return Err(Error::Contract(format!(
            "audio lasts {:.3}s but the scenes last {video:.3}s",
            audio.duration
        )));
    }
    Ok(())
}

/// Concatenation list for ffmpeg's concat demuxer, with paths relative to
/// the list file in `renders/`.
pub fn concat_list(scenes: &[VideoAsset]) -> String {
    scenes.iter().fold(String::new(), |mut out, s| {
        let _ = writeln!(out, "file '../{}'", s.path.replace('\'', "'\\''"));
        out
    })
}

pub fn render_command(list_rel: &str, audio_rel: &str, out_rel: &str) -> Vec<String> {
    let mut args: Vec<String> = [
        "-hide_banner", "-nostdin", "-v", "error", "-y", "-f", "concat", "-safe", "0", "-i", list_rel, "-i", audio_rel,
        "-map", "0:v:0", "-map", "1:a:0", "-c:v", "copy", "-c:a", "aac", "-b:a", "192k",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(tool::BITEXACT.iter().map(|s| s.to_string()));
    args.extend(["-map_metadata", "-1", "-f", "mp4", out_rel].iter().map(|s| s.to_string()));
    args
}

/// Joins the scenes with hard cuts, binds the mix and writes `out_rel`
/// (relative to the project root). Returns the video and the command used.
pub fn render_video(
    ffmpeg: &str,
    store: &AssetStore,
    scenes: &[VideoAsset],
    audio: &AudioAsset,
    out_rel: &str,
) -> Result<(VideoAsset, String)> {
    check_render_inputs(scenes, audio)?;
    let root = store.root();
    std::fs::create_dir_all(root.join(RENDERS_DIR))?;
    let list_rel = format!("{RENDERS_DIR}/concat.txt");
    std::fs::write(root.join(&list_rel), concat_list(scenes))?;
    let tmp_rel = format!("{out_rel}.partial");
    let args = render_command(&list_rel, &audio.path, &tmp_rel);
    let command = tool::transcript(ffmpeg, &args);
    tool::run(ffmpeg, &args, root)?;
    std::fs::rename(root.join(&tmp_rel), root.join(out_rel))?;
    let bytes = std::fs::read(root.join(out_rel))?;
    match probe_bytes(&bytes) {
        Ok(MediaInfo::Video {
            width,
            height,
            fps,
            frames,
            duration,
            ..
        }) => Ok((
            VideoAsset {
                content_hash: sha256_hex(&bytes),
                path: out_rel.to_string(),
                width,
                height,
                fps,
                frames,
                duration,
            },
            command,
        )),
        Ok(other) => Err(Error::CorruptAsset {
            path: root.join(out_rel),
            reason: format!("render produced {other:?}"),
        }),
        Err(reason) => Err(Error::CorruptAsset {
            path: root.join(out_rel),
            reason,
        }),
    }
}

fn srt_time(seconds: f64) -> String {
    let ms = (seconds.max(0.0) * 1000.0).round() as u64;
    format!(
        "{:02}:{:02}:{:02},{:03}",
        ms / 3_600_000,
        ms / 60_000 % 60,
        ms / 1000 % 60,
        ms % 1000
    )
}

/// One SRT cue per sentence spanning its narration.
pub fn format_subtitles(story: &Story, segments: &[SpeechSegment]) -> Result<String> {
    let mut out = String::new();
    for (n, seg) in segments.iter().enumerate() {
        let sentence = story.sentences.get(seg.sentence_index).ok_or_else(|| {
            Error::Contract(format!("speech segment for missing sentence {}", seg.sentence_index))
        })?;
        let _ = write!(
            out,
            "{}\n{} --> {}\n{}\n\n",
            n + 1,
            srt_time(seg.start),
            srt_time(seg.end()),
            sentence.text
        );
    }
    Ok(out)
}

pub fn emit_subtitles(story: &Story, segments: &[SpeechSegment], out_path: &Path) -> Result<()> {
    if let Some(dir) = out_path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_atomic(out_path, format_subtitles(story, segments)?.as_bytes())
}
