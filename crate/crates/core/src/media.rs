//! Media decoding, encoding and probing.
//!
//! Audio is handled as interleaved `f32` PCM in `[-1, 1]`. Images and videos
//! are only probed here; pixels are produced by the backends and by ffmpeg.

use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIX_SAMPLE_RATE: u32 = 44_100;

#[derive(Debug, Clone, PartialEq)]
pub struct Pcm {
    pub sample_rate: u32,
    pub channels: u16,
    /// Interleaved samples.
    pub samples: Vec<f32>,
}

impl Pcm {
    pub fn mono(sample_rate: u32, samples: Vec<f32>) -> Self {
        Self {
            sample_rate,
            channels: 1,
            samples,
        }
    }

    pub fn silence(sample_rate: u32, frames: usize) -> Self {
        Self::mono(sample_rate, vec![0.0; frames])
    }

    pub fn frames(&self) -> usize {
        self.samples.len() / self.channels.max(1) as usize
    }

    pub fn duration(&self) -> f64 {
        self.frames() as f64 / self.sample_rate as f64
    }

    /// Averages channels down to one.
    pub fn to_mono(&self) -> Pcm {
        if self.channels <= 1 {
            return self.clone();
        }
        let ch = self.channels as usize;
        let samples = self
            .samples
            .chunks_exact(ch)
            .map(|frame| frame.iter().sum::<f32>() / ch as f32)
            .collect();
        Pcm::mono(self.sample_rate, samples)
    }

    /// Linear-interpolation resample of a mono signal to exactly `frames` output frames.
    pub fn resample_mono(&self, sample_rate: u32, frames: usize) -> Pcm {
        let src = self.to_mono();
        if src.sample_rate == sample_rate && src.samples.len() == frames {
            return src;
        }
        let input = &src.samples;
        let ratio = src.sample_rate as f64 / sample_rate as f64;
        let samples = (0..frames)
            .map(|i| {
                let pos = i as f64 * ratio;
                let idx = pos.floor() as usize;
                let frac = (pos - idx as f64) as f32;
                let a = input.get(idx).copied().unwrap_or(0.0);
                let b = input.get(idx + 1).copied().unwrap_or(a);
                a + (b - a) * frac
            })
            .collect();
        Pcm::mono(sample_rate, samples)
    }

    /// Resample to `sample_rate`, keeping the duration.
    pub fn resample_to(&self, sample_rate: u32) -> Pcm {
        let frames = (self.frames() as f64 * sample_rate as f64 / self.sample_rate as f64).round() as usize;
        self.resample_mono(sample_rate, frames)
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    pub fn decode_wav(bytes: &[u8]) -> Result<Pcm> {
        let corrupt = |reason: String| Error::CorruptAsset {
            path: "<wav bytes>".into(),
            reason,
        };
        let mut reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| corrupt(e.to_string()))?;
        let spec = reader.spec();
        let samples: Vec<f32> = match spec.sample_format {
            hound::SampleFormat::Float => reader
                .samples::<f32>()
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| corrupt(e.to_string()))?,
            hound::SampleFormat::Int => {
                let scale = (1u64 << (spec.bits_per_sample - 1)) as f32;
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f32 / scale))
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| corrupt(e.to_string()))?
            }
        };
        Ok(Pcm {
            sample_rate: spec.sample_rate,
            channels: spec.channels,
            samples,
        })
    }

    pub fn read_wav(path: &Path) -> Result<Pcm> {
        let bytes = std::fs::read(path)?;
        Pcm::decode_wav(&bytes).map_err(|e| match e {
            Error::CorruptAsset { reason, .. } => Error::CorruptAsset {
                path: path.to_path_buf(),
                reason,
            },
            e => e,
        })
    }

    /// 16-bit PCM WAV bytes.
    pub fn encode_wav(&self) -> Vec<u8> {
        let spec = hound::WavSpec {
            channels: self.channels,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut out = Cursor::new(Vec::new());
        {
            let mut writer = hound::WavWriter::new(&mut out, spec).expect("in-memory wav writer");
            for &s in &self.samples {
                writer
                    .write_sample(quantize_i16(s))
                    .expect("in-memory wav write");
            }
            writer.finalize().expect("in-memory wav finalize");
        }
        out.into_inner()
    }
}

pub fn quantize_i16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16
}

pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    (samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / samples.len() as f64).sqrt()
}

/// Metadata of a media file as read from its container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum MediaInfo {
    Image {
        width: u32,
        height: u32,
    },
    Audio {
        sample_rate: u32,
        channels: u16,
        frames: u64,
        duration: f64,
    },
    Video {
        width: u32,
        height: u32,
        fps: f64,
        frames: u64,
        duration: f64,
        has_audio: bool,
    },
}

impl MediaInfo {
    pub fn duration(&self) -> Option<f64> {
        match self {
            MediaInfo::Image { .. } => None,
            MediaInfo::Audio { duration, .. } | MediaInfo::Video { duration, .. } => Some(*duration),
        }
    }
}

pub fn probe_asset(path: &Path) -> Result<MediaInfo> {
    let bytes = std::fs::read(path)?;
    probe_bytes(&bytes).map_err(|reason| Error::CorruptAsset {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn probe_bytes(bytes: &[u8]) -> std::result::Result<MediaInfo, String> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png).map_err(|e| e.to_string())?;
        return Ok(MediaInfo::Image {
            width: img.width(),
            height: img.height(),
        });
    }
    if bytes.len() >= 12 && &bytes[..4] == b"RIFF" && &bytes[8..12] == b"WAVE" {
        let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| e.to_string())?;
        let spec = reader.spec();
        let frames = reader.duration() as u64;
        return Ok(MediaInfo::Audio {
            sample_rate: spec.sample_rate,
            channels: spec.channels,
            frames,
            duration: frames as f64 / spec.sample_rate as f64,
        });
    }
    if bytes.len() >= 8 && &bytes[4..8] == b"ftyp" {
        return probe_mp4(bytes);
    }
    Err("unrecognized media container".to_string())
}

fn probe_mp4(bytes: &[u8]) -> std::result::Result<MediaInfo, String> {
    let reader = mp4::Mp4Reader::read_header(Cursor::new(bytes), bytes.len() as u64).map_err(|e| e.to_string())?;
    let mut video = None;
    let mut has_audio = false;
    let mut duration: f64 = 0.0;
    let mut tracks: Vec<_> = reader.tracks().values().collect();
    tracks.sort_by_key(|t| t.track_id());
    for track in tracks {
        duration = duration.max(track.duration().as_secs_f64());
        match track.track_type() {
            Ok(mp4::TrackType::Video) if video.is_none() => {
                let frames = track.sample_count() as u64;
                let track_secs = track.duration().as_secs_f64();
                let fps = if track_secs > 0.0 { frames as f64 / track_secs } else { track.frame_rate() };
                video = Some((track.width() as u32, track.height() as u32, fps, frames));
            }
            Ok(mp4::TrackType::Audio) => has_audio = true,
            _ => {}
        }
    }
    let (width, height, fps, frames) = video.ok_or("mp4 has no video track")?;
    if frames == 0 {
        return Err("mp4 video track is empty".into());
    }
    Ok(MediaInfo::Video {
        width,
        height,
        fps,
        frames,
        duration,
        has_audio,
    })
}
