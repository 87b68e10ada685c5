//! Narration layout, music fitting, ducking and the final audio mix.

use serde::{Deserialize, Serialize};

use crate::assets::{AssetStore, AudioAsset};
use crate::error::{Error, Result};
use crate::media::{Pcm, MIX_SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixConfig {
    pub inter_sentence_pause: f64,
    pub lead_in: f64,
    pub tail: f64,
    pub music_gain_db: f64,
    pub duck_extra_db: f64,
    /// Milliseconds.
    pub duck_attack_release: f64,
    pub fade_out: f64,
    pub channels: u16,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            inter_sentence_pause: 0.7,
            lead_in: 0.5,
            tail: 1.0,
            music_gain_db: -12.0,
            duck_extra_db: -8.0,
            duck_attack_release: 250.0,
            fade_out: 2.0,
            channels: 1,
        }
    }
}

impl MixConfig {
    pub fn validate(&self) -> Result<()> {
        let durations = [
            ("inter_sentence_pause", self.inter_sentence_pause),
            ("lead_in", self.lead_in),
            ("tail", self.tail),
            ("duck_attack_release", self.duck_attack_release),
            ("fade_out", self.fade_out),
        ];
        for (name, v) in durations {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("mix {name} must be a non-negative number, got {v}")));
            }
        }
        for (name, v) in [("music_gain_db", self.music_gain_db), ("duck_extra_db", self.duck_extra_db)] {
            if !(v <= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("mix {name} must be at most 0 dB, got {v}")));
            }
        }
        if !matches!(self.channels, 1 | 2) {
            return Err(Error::Config(format!("mix channels must be 1 or 2, got {}", self.channels)));
        }
        Ok(())
    }

    pub fn music_gain(&self) -> f64 {
        db_to_gain(self.music_gain_db)
    }

    pub fn ducked_gain(&self) -> f64 {
        db_to_gain(self.music_gain_db + self.duck_extra_db)
    }
}

pub fn db_to_gain(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechSegment {
    pub sentence_index: usize,
    pub audio: AudioAsset,
    pub start: f64,
}

impl SpeechSegment {
    pub fn end(&self) -> f64 {
        self.start + self.audio.duration
    }
}

/// Places narration clips one after another with the configured pauses.
pub fn layout_speech(clips: &[AudioAsset], cfg: &MixConfig) -> Result<(Vec<SpeechSegment>, f64)> {
    if clips.is_empty() {
        return Err(Error::Layout("no narration to lay out".into()));
    }
    let mut start = cfg.lead_in;
    let mut segments = Vec::with_capacity(clips.len());
    for (i, audio) in clips.iter().enumerate() {
        if i > 0 {
            start += clips[i - 1].duration + cfg.inter_sentence_pause;
        }
        segments.push(SpeechSegment {
            sentence_index: i,
            audio: audio.clone(),
            start,
        });
    }
    let total = segments.last().map(SpeechSegment::end).unwrap_or(0.0) + cfg.tail;
    Ok((segments, total))
}

/// Scene time spans: scene 0 opens at 0 and holds the lead-in, each later
/// scene opens when its sentence starts, the last one runs to `total`.
pub fn scene_spans(segments: &[SpeechSegment], total: f64) -> Vec<(f64, f64)> {
    let n = segments.len();
    (0..n)
        .map(|i| {
            let start = if i == 0 { 0.0 } else { segments[i].start };
            let end = if i + 1 == n { total } else { segments[i + 1].start };
            (start, end)
        })
        .collect()
}

/// Frame counts per span using cumulative rounding, so the counts add up to
/// `round(total * fps)` and each is within one frame of `duration * fps`.
pub fn scene_frame_counts(spans: &[(f64, f64)], fps: u32) -> Vec<u64> {
    let at = |t: f64| (t * fps as f64).round() as i64;
    spans
        .iter()
        .map(|&(s, e)| (at(e) - at(s)).max(1) as u64)
        .collect()
}

/// Loops or trims to exactly `round(total * rate)` frames, then fades out linearly.
pub fn fit_music_pcm(music: &Pcm, total: f64, fade_out: f64) -> Result<Pcm> {
    let music = music.to_mono();
    if music.samples.is_empty() {
        return Err(Error::Layout("music track is empty".into()));
    }
    let rate = music.sample_rate;
    let frames = (total * rate as f64).round() as usize;
    let mut samples: Vec<f32> = music.samples.iter().copied().cycle().take(frames).collect();
    let fade = ((fade_out * rate as f64).round() as usize).min(frames);
    let offset = frames - fade;
    for k in 0..fade {
        samples[offset + k] *= (1.0 - (k + 1) as f64 / fade as f64) as f32;
    }
    Ok(Pcm::mono(rate, samples))
}

pub fn fit_music(store: &AssetStore, music: &AudioAsset, total: f64, cfg: &MixConfig) -> Result<AudioAsset> {
    if music.duration <= 0.0 {
        return Err(Error::Layout("music track has no duration".into()));
    }
    let pcm = Pcm::read_wav(&store.abs(&music.path))?;
    let fitted = fit_music_pcm(&pcm, total, cfg.fade_out)?;
    store.put_audio(&fitted.encode_wav())
}

/// Per-sample music gain at `sample_rate`: the ducked level inside speech
/// spans, ramping linearly over the attack before a span and the release
/// after it, the plain music level elsewhere.
pub fn duck_envelope_spans(spans: &[(f64, f64)], total: f64, cfg: &MixConfig, sample_rate: u32) -> Vec<f32> {
    let frames = (total * sample_rate as f64).round() as usize;
    let rate = sample_rate as f64;
    let ramp = cfg.duck_attack_release / 1000.0;
    let mut depth = vec![0f64; frames];
    for &(s, e) in spans {
        let lo = (((s - ramp) * rate).floor().max(0.0) as usize).min(frames);
        let hi = (((e + ramp) * rate).ceil().max(0.0) as usize + 1).min(frames);
        for (i, d) in depth.iter_mut().enumerate().take(hi).skip(lo) {
            let t = i as f64 / rate;
            let w = if t >= s && t <= e {
                1.0
            } else if t < s {
                if ramp > 0.0 { 1.0 - (s - t) / ramp } else { 0.0 }
            } else if ramp > 0.0 {
                1.0 - (t - e) / ramp
            } else {
                0.0
            };
            *d = d.max(w.clamp(0.0, 1.0));
        }
    }
    let (out, inside) = (cfg.music_gain(), cfg.ducked_gain());
    depth.into_iter().map(|w| (out + (inside - out) * w) as f32).collect()
}

pub fn duck_envelope(segments: &[SpeechSegment], total: f64, cfg: &MixConfig, sample_rate: u32) -> Vec<f32> {
    let spans: Vec<(f64, f64)> = segments.iter().map(|s| (s.start, s.end())).collect();
    duck_envelope_spans(&spans, total, cfg, sample_rate)
}

/// `time,multiplier` rows, one every `step` samples.
pub fn envelope_csv(envelope: &[f32], sample_rate: u32, step: usize) -> String {
    let mut out = String::from("time,multiplier\n");
    for (i, g) in envelope.iter().enumerate().step_by(step.max(1)) {
        out.push_str(&format!("{:.6},{:.6}\n", i as f64 / sample_rate as f64, g));
    }
    out
}

/// `clamp(sum(speech) + envelope * music)` at 44.1 kHz. `speech` holds
/// `(start seconds, clip)` pairs; every clip must end by `total`.
pub fn mix_pcm(speech: &[(f64, Pcm)], music: &Pcm, envelope: &[f32], total: f64, channels: u16) -> Result<Pcm> {
    let rate = MIX_SAMPLE_RATE;
    let frames = (total * rate as f64).round() as usize;
    let music = music.resample_mono(rate, frames);
    if envelope.len() != frames {
        return Err(Error::Layout(format!(
            "envelope has {} samples, mix needs {frames}",
            envelope.len()
        )));
    }
    let mut bus: Vec<f32> = music.samples.iter().zip(envelope).map(|(m, g)| m * g).collect();
    for (start, clip) in speech {
        if *start < 0.0 || start + clip.duration() > total + 1e-6 {
            return Err(Error::Layout(format!(
                "speech at {start:.3}s lasting {:.3}s exceeds the {total:.3}s timeline",
                clip.duration()
            )));
        }
        let clip = clip.resample_to(rate);
        let offset = (start * rate as f64).round() as usize;
        for (k, s) in clip.samples.iter().enumerate() {
            if let Some(slot) = bus.get_mut(offset + k) {
                *slot += s;
            }
        }
    }
    for s in &mut bus {
        *s = s.clamp(-1.0, 1.0);
    }
    let samples = if channels == 2 {
        bus.iter().flat_map(|&s| [s, s]).collect()
    } else {
        bus
    };
    Ok(Pcm {
        sample_rate: rate,
        channels,
        samples,
    })
}

/// Mixes stored narration and fitted music into a stored WAV; also returns
/// the envelope used.
pub fn mix(
    store: &AssetStore,
    segments: &[SpeechSegment],
    fitted_music: &AudioAsset,
    total: f64,
    cfg: &MixConfig,
) -> Result<(AudioAsset, Vec<f32>)> {
    let speech = segments
        .iter()
        .map(|s| Ok((s.start, Pcm::read_wav(&store.abs(&s.audio.path))?)))
        .collect::<Result<Vec<_>>>()?;
    let music = Pcm::read_wav(&store.abs(&fitted_music.path))?;
    let envelope = duck_envelope(segments, total, cfg, MIX_SAMPLE_RATE);
    let pcm = mix_pcm(&speech, &music, &envelope, total, cfg.channels)?;
    Ok((store.put_audio(&pcm.encode_wav())?, envelope))
}

/// Splits one whole-story narration into per-sentence spans, proportional
/// to sentence length in characters.
pub fn split_by_characters(duration: f64, lead_in: f64, sentence_chars: &[usize]) -> Vec<(f64, f64)> {
    let total_chars: usize = sentence_chars.iter().sum::<usize>().max(1);
    let mut t = lead_in;
    sentence_chars
        .iter()
        .map(|&c| {
            let d = duration * c as f64 / total_chars as f64;
            let span = (t, t + d);
            t += d;
            span
        })
        .collect()
}
