//! Mixes synthetic narration over a music bed with ducking and writes a WAV.
//!
//! `cargo run --example audio_mix -- out.wav`

use storyreel::media::{Pcm, MIX_SAMPLE_RATE};
use storyreel::timeline::{duck_envelope_spans, mix_pcm, MixConfig};

fn tone(freq: f64, seconds: f64, amp: f32) -> Pcm {
    let n = (seconds * MIX_SAMPLE_RATE as f64) as usize;
    let samples = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / MIX_SAMPLE_RATE as f64).sin() as f32 * amp)
        .collect();
    Pcm::mono(MIX_SAMPLE_RATE, samples)
}

fn main() -> storyreel::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "mix.wav".into());
    let cfg = MixConfig::default();
    let total = 8.0;
    let speech = vec![(0.5, tone(330.0, 2.0, 0.6)), (3.2, tone(392.0, 3.0, 0.6))];
    let spans: Vec<(f64, f64)> = speech.iter().map(|(s, p)| (*s, s + p.duration())).collect();
    let envelope = duck_envelope_spans(&spans, total, &cfg, MIX_SAMPLE_RATE);
    let mixed = mix_pcm(&speech, &tone(110.0, total, 0.9), &envelope, total, 2)?;
    println!(
        "{} frames x {} channels, peak {:.3}, music gain {:.3} -> {:.3} under speech",
        mixed.frames(),
        mixed.channels,
        mixed.samples.iter().fold(0.0f32, |m, s| m.max(s.abs())),
        cfg.music_gain(),
        cfg.ducked_gain()
    );
    std::fs::write(&out, mixed.encode_wav())?;
    println!("wrote {out}");
    Ok(())
}
