//! Deterministic stand-ins for every backend kind.
//!
//! Each output is a pure function of the request payload (including its
//! seed), so mock runs are reproducible byte for byte.

use std::f32::consts::TAU;
use std::io::Cursor;
use std::sync::atomic::{AtomicU64, Ordering};

use image::{ImageEncoder, Rgb, RgbImage};

use super::{silent_twin, Backend, BackendCall, BackendKind, BackendOutput};
use crate::camera::CameraPath;
use crate::compose::{render_native, EncodeSettings};
use crate::error::BackendError;
use crate::hashing::seed_from;
use crate::media::{probe_bytes, MediaInfo, Pcm};

pub const MOCK_MODEL: &str = "storyreel-mock/1";
pub const MOCK_TTS_SAMPLE_RATE: u32 = 22_050;
pub const MOCK_MUSIC_SAMPLE_RATE: u32 = 44_100;
/// Milliseconds of mock speech per character at `length_scale` 1.0.
pub const MOCK_MS_PER_CHAR: f64 = 60.0;

const DESCRIPTION_MARKER: &str = "From the sentence ";
const DESCRIPTION_TAIL: &str = ", here is what the picture looks like:";

const STORY_TEMPLATE: [&str; 8] = [
    "Once upon a time, a little {x} lived at the edge of a quiet village.",
    "One morning the {x} met a gentle {y} standing alone in a meadow.",
    "The {y} looked lonely, so the {x} shared an apple and sat down beside it.",
    "Mr. Hill, the old farmer, smiled as he watched the two new friends play.",
    "Every day the {x} and the {y} explored the green hills together.",
    "When a storm rolled in, the {y} led the {x} safely back home.",
    "The whole village cheered for the brave pair!",
    "From then on, the {x} and the {y} were never apart.",
];

pub struct MockBackend {
    kind: BackendKind,
    ffmpeg: String,
    invocations: AtomicU64,
}

impl MockBackend {
    pub fn new(kind: BackendKind, ffmpeg: &str) -> Self {
        Self {
            kind,
            ffmpeg: ffmpeg.to_string(),
            invocations: AtomicU64::new(0),
        }
    }

    pub fn invocations(&self) -> u64 {
        self.invocations.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn invoke(&self, call: &BackendCall<'_>) -> Result<BackendOutput, BackendError> {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let req = call.request;
        match self.kind {
            BackendKind::Text => Ok(BackendOutput::Text(mock_completion(req.str_field("prompt")?, req.seed()))),
            BackendKind::Image => {
                let width = req.f64_field("width")? as u32;
                let height = req.f64_field("height")? as u32;
                Ok(BackendOutput::Image {
                    bytes: mock_image(req.str_field("prompt")?, req.seed(), width, height),
                    nsfw: None,
                })
            }
            BackendKind::Tts => Ok(BackendOutput::Audio(
                mock_speech(req.str_field("text")?, req.f64_field("length_scale")?).encode_wav(),
            )),
            BackendKind::Music => Ok(BackendOutput::Audio(
                mock_music(req.str_field("preset")?, req.seed(), req.f64_field("duration")?).encode_wav(),
            )),
            BackendKind::VocalSeparation => {
                let input = call
                    .inputs
                    .first()
                    .ok_or_else(|| BackendError::Malformed("separation needs an input track".into()))?;
                let instruments = std::fs::read(input).map_err(|e| BackendError::Failed(e.to_string()))?;
                Ok(BackendOutput::Stems {
                    vocals: silent_twin(&instruments)?,
                    instruments,
                })
            }
            BackendKind::DepthEffect => self.depth_effect(call),
        }
    }
}

impl MockBackend {
    /// Delegates to the native 2D renderer.
    fn depth_effect(&self, call: &BackendCall<'_>) -> Result<BackendOutput, BackendError> {
        let req = call.request;
        let malformed = |e: serde_json::Error| BackendError::Malformed(e.to_string());
        let path: CameraPath =
            serde_json::from_value(req.payload.get("camera_path").cloned().unwrap_or_default()).map_err(malformed)?;
        let encode: EncodeSettings =
            serde_json::from_value(req.payload.get("encode").cloned().unwrap_or_default()).map_err(malformed)?;
        let frames = req.f64_field("frames")? as u64;
        let fps = req.f64_field("fps")? as u32;
        let image = call
            .inputs
            .first()
            .ok_or_else(|| BackendError::Malformed("depth effect needs an input image".into()))?;
        let bytes = std::fs::read(image).map_err(|e| BackendError::Failed(e.to_string()))?;
        let (width, height) = match probe_bytes(&bytes) {
            Ok(MediaInfo::Image { width, height }) => (width, height),
            _ => return Err(BackendError::Malformed("depth effect input is not an image".into())),
        };
        let workdir = tempfile::tempdir().map_err(|e| BackendError::Failed(e.to_string()))?;
        let src = workdir.path().join("input.png");
        std::fs::write(&src, &bytes).map_err(|e| BackendError::Failed(e.to_string()))?;
        render_native(
            &self.ffmpeg,
            workdir.path(),
            "input.png",
            (width, height),
            &path,
            frames,
            fps,
            &encode,
            "out.mp4",
        )
        .map_err(|e| BackendError::Failed(e.to_string()))?;
        let video = std::fs::read(workdir.path().join("out.mp4")).map_err(|e| BackendError::Failed(e.to_string()))?;
        Ok(BackendOutput::Video(video))
    }
}

/// Fixed completions: picture descriptions for description prompts, the
/// eight-sentence template for story prompts.
pub fn mock_completion(prompt: &str, seed: u64) -> String {
    if let Some(sentence) = description_subject(prompt) {
        return format!("illustration of: {sentence}");
    }
    if let Some((x, y)) = story_subjects(prompt) {
        return mock_story(x, y);
    }
    format!("Mock completion {:016x}.", seed_from(&[prompt.as_bytes(), &seed.to_le_bytes()]))
}

pub fn mock_story(x: &str, y: &str) -> String {
    STORY_TEMPLATE
        .iter()
        .map(|s| s.replace("{x}", x).replace("{y}", y))
        .collect::<Vec<_>>()
        .join(" ")
}

fn description_subject(prompt: &str) -> Option<&str> {
    let body = prompt.trim_end().strip_suffix(DESCRIPTION_TAIL)?;
    let start = body.rfind(DESCRIPTION_MARKER)? + DESCRIPTION_MARKER.len();
    Some(&body[start..])
}

fn story_subjects(prompt: &str) -> Option<(&str, &str)> {
    let body = prompt.trim_end().strip_suffix(':')?;
    let rest = &body[body.rfind(" about a ")? + " about a ".len()..];
    let (x, y) = rest.split_once(" and a ")?;
    Some((x.trim(), y.trim()))
}

fn hsv(h: f32, s: f32, v: f32) -> Rgb<u8> {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to8 = |f: f32| ((f + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    Rgb([to8(r), to8(g), to8(b)])
}

/// Background hue for a mock image.
pub fn mock_image_hue(prompt: &str, seed: u64) -> f32 {
    (seed_from(&[prompt.as_bytes(), &seed.to_le_bytes()]) % 360) as f32
}

pub fn mock_background(prompt: &str, seed: u64) -> Rgb<u8> {
    hsv(mock_image_hue(prompt, seed), 0.55, 0.85)
}

/// Flat background in the hashed hue with a contrasting disc near the centre.
pub fn mock_image(prompt: &str, seed: u64, width: u32, height: u32) -> Vec<u8> {
    let h = seed_from(&[prompt.as_bytes(), &seed.to_le_bytes()]);
    let hue = mock_image_hue(prompt, seed);
    let bg = hsv(hue, 0.55, 0.85);
    let fg = hsv(hue + 180.0, 0.6, 0.95);
    let cx = width as f32 * (0.35 + 0.3 * ((h >> 16) % 1000) as f32 / 1000.0);
    let cy = height as f32 * (0.35 + 0.3 * ((h >> 32) % 1000) as f32 / 1000.0);
    let radius = 0.2 * width.min(height) as f32;
    let img = RgbImage::from_fn(width, height, |x, y| {
        let dx = x as f32 + 0.5 - cx;
        let dy = y as f32 + 0.5 - cy;
        if dx * dx + dy * dy <= radius * radius {
            fg
        } else {
            bg
        }
    });
    let mut out = Cursor::new(Vec::new());
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(img.as_raw(), width, height, image::ExtendedColorType::Rgb8)
        .expect("in-memory png encode");
    out.into_inner()
}

/// Silence with a short beep; lasts 60 ms per character times `length_scale`.
pub fn mock_speech(text: &str, length_scale: f64) -> Pcm {
    let duration_ms = MOCK_MS_PER_CHAR * text.chars().count() as f64 * length_scale;
    let frames = (duration_ms / 1000.0 * MOCK_TTS_SAMPLE_RATE as f64).round() as usize;
    let freq = 330.0 + (seed_from(&[text.as_bytes()]) % 330) as f32;
    let beep_len = (frames / 4).min(MOCK_TTS_SAMPLE_RATE as usize / 5);
    let beep_start = (frames - beep_len) / 2;
    let samples = (0..frames)
        .map(|i| {
            if (beep_start..beep_start + beep_len).contains(&i) {
                0.4 * (TAU * freq * i as f32 / MOCK_TTS_SAMPLE_RATE as f32).sin()
            } else {
                0.0
            }
        })
        .collect();
    Pcm::mono(MOCK_TTS_SAMPLE_RATE, samples)
}

/// Looped four-note sine motif chosen by `(preset, seed)`, exactly `duration` long.
pub fn mock_music(preset: &str, seed: u64, duration: f64) -> Pcm {
    const PENTATONIC: [f32; 8] = [261.63, 293.66, 329.63, 392.0, 440.0, 523.25, 587.33, 659.25];
    const NOTE_SECS: f32 = 0.5;
    let h = seed_from(&[preset.as_bytes(), &seed.to_le_bytes()]);
    let motif: Vec<f32> = (0..4).map(|i| PENTATONIC[((h >> (i * 8)) % 8) as usize]).collect();
    let rate = MOCK_MUSIC_SAMPLE_RATE as f32;
    let frames = (duration * MOCK_MUSIC_SAMPLE_RATE as f64).round() as usize;
    let note_frames = (NOTE_SECS * rate) as usize;
    let ramp = (0.01 * rate) as usize;
    let samples = (0..frames)
        .map(|i| {
            let note = motif[(i / note_frames) % motif.len()];
            let pos = i % note_frames;
            let env = (pos.min(note_frames - pos) as f32 / ramp as f32).min(1.0);
            0.5 * env * (TAU * note * i as f32 / rate).sin()
        })
        .collect();
    Pcm::mono(MOCK_MUSIC_SAMPLE_RATE, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::story::segment_sentences;

    #[test]
    fn story_prompt_yields_eight_sentences() {
        let text = mock_completion("The following is a children's story about a boy and a horse:", 42);
        assert!(text.contains("boy") && text.contains("horse"));
        assert_eq!(segment_sentences(&text).len(), 8);
        assert_eq!(text, mock_completion("The following is a children's story about a boy and a horse:", 42));
    }

    #[test]
    fn custom_prompt_subjects() {
        let text = mock_completion("The following is a horror story about a demon and a cat:", 1);
        assert!(text.contains("demon") && text.contains("cat"));
    }

    #[test]
    fn description_rule() {
        let prompt = "Story.\nThe story has pictures accompanying it. From the sentence A boy met a horse., here is what the picture looks like:";
        assert_eq!(mock_completion(prompt, 0), "illustration of: A boy met a horse.");
    }

    #[test]
    fn speech_duration_rule() {
        assert_eq!(mock_speech("Hello.", 1.0).frames(), 7938); // 0.360 s
        assert_eq!(mock_speech("Hello.", 2.1).frames(), 16_670); // 0.756 s
        assert!((mock_speech("Hello.", 2.1).duration() - 0.756).abs() < 1e-4);
    }

    #[test]
    fn music_is_exact_and_seeded() {
        let a = mock_music("raffi", 42, 60.0);
        assert_eq!(a.frames(), 60 * 44_100);
        assert_eq!(a, mock_music("raffi", 42, 60.0));
        assert_ne!(a, mock_music("the wiggles", 42, 60.0));
    }

    #[test]
    fn image_dimensions_and_seed_dependence() {
        let a = mock_image("a horse", 1, 512, 256);
        match probe_bytes(&a).unwrap() {
            MediaInfo::Image { width, height } => assert_eq!((width, height), (512, 256)),
            other => panic!("{other:?}"),
        }
        assert_ne!(a, mock_image("a horse", 2, 512, 256));
        assert_eq!(a, mock_image("a horse", 1, 512, 256));
    }

    #[test]
    fn corner_pixel_is_background() {
        let png = mock_image("a horse", 9, 256, 256);
        let img = image::load_from_memory(&png).unwrap().to_rgb8();
        assert_eq!(*img.get_pixel(3, 3), mock_background("a horse", 9));
    }
}
