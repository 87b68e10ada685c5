//! Strategies and property bodies shared by the property tests and the
//! acceptance report.

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use storyreel::camera::{crop_rect, interpolate_camera, CameraKeyframe, CameraPath, Easing, MAX_ZOOM, MIN_ZOOM};
use storyreel::media::{Pcm, MIX_SAMPLE_RATE};
use storyreel::story::{normalize_whitespace, segment_sentences};
use storyreel::timeline::{duck_envelope_spans, mix_pcm, MixConfig};

/// Runner with a fixed seed so reports are reproducible.
pub fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

pub fn easing() -> impl Strategy<Value = Easing> {
    prop_oneof![Just(Easing::Linear), Just(Easing::Smoothstep)]
}

fn interior_times() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..0.999, 0..5).prop_map(|mut ts| {
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    })
}

fn keyframes(times: Vec<f64>, zooms: Vec<f64>, centers: Vec<(f64, f64)>, rotations: Vec<f64>) -> Vec<CameraKeyframe> {
    times
        .into_iter()
        .enumerate()
        .map(|(i, t)| CameraKeyframe {
            t,
            zoom: zooms[i],
            center_x: centers[i].0,
            center_y: centers[i].1,
            rotation: rotations[i],
        })
        .collect()
}

fn all_times(interior: Vec<f64>) -> Vec<f64> {
    let mut times = vec![0.0];
    times.extend(interior);
    times.push(1.0);
    times
}

/// Any valid path: 2 to 6 keyframes, zoom in [1, 4], centres anywhere.
pub fn camera_path() -> impl Strategy<Value = CameraPath> {
    (interior_times(), easing())
        .prop_flat_map(|(interior, easing)| {
            let n = interior.len() + 2;
            (
                Just(all_times(interior)),
                prop::collection::vec(MIN_ZOOM..=MAX_ZOOM, n),
                prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), n),
                prop::collection::vec(-30.0f64..=30.0, n),
                Just(easing),
            )
        })
        .prop_map(|(times, zooms, centers, rotations, easing)| {
            CameraPath::new(keyframes(times, zooms, centers, rotations), easing).expect("generated path is valid")
        })
}

/// A valid path whose zooms never decrease (or never increase) over time.
pub fn monotone_zoom_path() -> impl Strategy<Value = (CameraPath, bool)> {
    (camera_path(), any::<bool>()).prop_map(|(mut path, rising)| {
        let mut zooms: Vec<f64> = path.keyframes.iter().map(|k| k.zoom).collect();
        zooms.sort_by(f64::total_cmp);
        if !rising {
            zooms.reverse();
        }
        for (k, z) in path.keyframes.iter_mut().zip(zooms) {
            k.zoom = z;
        }
        (path, rising)
    })
}

pub fn image_size() -> impl Strategy<Value = (u32, u32)> {
    (1u32..=2048, 1u32..=2048)
}

pub fn sample_times() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 100)
}

pub fn check_bounds(path: &CameraPath, (w, h): (u32, u32), ts: &[f64]) -> Result<(), TestCaseError> {
    for &t in ts {
        let kf = interpolate_camera(path, t).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let r = crop_rect(w, h, &kf);
        prop_assert!(r.within(w, h), "crop {r:?} outside {w}x{h} at t={t} for {path:?}");
    }
    Ok(())
}

pub fn check_monotone(path: &CameraPath, rising: bool) -> Result<(), TestCaseError> {
    let mut prev = interpolate_camera(path, 0.0).unwrap().zoom;
    for i in 1..=1000 {
        let z = interpolate_camera(path, i as f64 / 1000.0).unwrap().zoom;
        if rising {
            prop_assert!(z >= prev, "zoom fell from {prev} to {z} at step {i}");
        } else {
            prop_assert!(z <= prev, "zoom rose from {prev} to {z} at step {i}");
        }
        prev = z;
    }
    Ok(())
}

pub fn check_endpoints(path: &CameraPath) -> Result<(), TestCaseError> {
    let kfs = &path.keyframes;
    prop_assert_eq!(interpolate_camera(path, 0.0).unwrap(), kfs[0]);
    prop_assert_eq!(interpolate_camera(path, 1.0).unwrap(), kfs[kfs.len() - 1]);
    for kf in kfs {
        prop_assert_eq!(interpolate_camera(path, kf.t).unwrap(), *kf);
    }
    Ok(())
}

/// Full-scale square waves or noise: the worst case for clipping.
fn loud_clip(seconds: f64, sample_rate: u32, kind: u8) -> Pcm {
    let n = ((seconds * sample_rate as f64) as usize).max(1);
    let samples = (0..n)
        .map(|i| match kind % 3 {
            0 => if (i / 7) % 2 == 0 { 1.0 } else { -1.0 },
            1 => 1.0,
            _ => if (i.wrapping_mul(2654435761) >> 7) % 2 == 0 { 1.0 } else { -1.0 },
        })
        .collect();
    Pcm::mono(sample_rate, samples)
}

/// Speech clips as (start, seconds, kind), music kind, music gain, channels.
pub type MixCase = (Vec<(f64, f64, u8)>, u8, f64, u16);

pub fn mix_case() -> impl Strategy<Value = MixCase> {
    (
        prop::collection::vec((0.0f64..3.0, 0.05f64..1.0, any::<u8>()), 0..4),
        any::<u8>(),
        -12.0f64..=0.0,
        prop_oneof![Just(1u16), Just(2u16)],
    )
}

pub fn check_mix(case: &MixCase) -> Result<(), TestCaseError> {
    let (clips, music_kind, gain_db, channels) = case;
    let total = clips.iter().map(|(s, d, _)| s + d).fold(0.5, f64::max);
    let speech: Vec<(f64, Pcm)> = clips
        .iter()
        .enumerate()
        .map(|(i, &(s, d, k))| (s, loud_clip(d, if i % 2 == 0 { 22_050 } else { 44_100 }, k)))
        .map(|(s, pcm)| (s.min(total - pcm.duration()).max(0.0), pcm))
        .collect();
    let cfg = MixConfig {
        music_gain_db: *gain_db,
        duck_extra_db: 0.0,
        ..MixConfig::default()
    };
    let spans: Vec<(f64, f64)> = speech.iter().map(|(s, p)| (*s, s + p.duration())).collect();
    let envelope = duck_envelope_spans(&spans, total, &cfg, MIX_SAMPLE_RATE);
    let music = loud_clip(total, MIX_SAMPLE_RATE, *music_kind);
    let out = mix_pcm(&speech, &music, &envelope, total, *channels).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let frames = (total * MIX_SAMPLE_RATE as f64).round() as usize;
    prop_assert_eq!(out.frames(), frames);
    prop_assert_eq!(out.samples.len(), frames * *channels as usize);
    prop_assert!(out.samples.iter().all(|s| (-1.0..=1.0).contains(s)));
    Ok(())
}

/// Music RMS drop inside speech relative to outside, in dB, on a steady tone.
pub fn measured_duck_db(cfg: &MixConfig) -> f64 {
    let rate = MIX_SAMPLE_RATE;
    let total = 12.0;
    let spans = [(2.0, 4.0), (6.0, 9.0)];
    let envelope = duck_envelope_spans(&spans, total, cfg, rate);
    let n = (total * rate as f64).round() as usize;
    let tone: Vec<f32> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * 440.0 * i as f64 / rate as f64).sin() as f32 * 0.8)
        .collect();
    let silent: Vec<(f64, Pcm)> = spans
        .iter()
        .map(|&(s, e)| (s, Pcm::silence(rate, ((e - s) * rate as f64) as usize)))
        .collect();
    let out = mix_pcm(&silent, &Pcm::mono(rate, tone), &envelope, total, 1).unwrap();
    let ramp = cfg.duck_attack_release / 1000.0;
    let (mut inside, mut outside) = (Vec::new(), Vec::new());
    for (i, s) in out.samples.iter().enumerate() {
        let t = i as f64 / rate as f64;
        if spans.iter().any(|&(a, b)| t >= a && t <= b) {
            inside.push(*s);
        } else if spans.iter().all(|&(a, b)| t < a - ramp - 0.01 || t > b + ramp + 0.01) {
            outside.push(*s);
        }
    }
    20.0 * (storyreel::media::rms(&inside) / storyreel::media::rms(&outside)).log10()
}

const WORDS: &[&str] = &[
    "the", "boy", "horse", "ran", "across", "a", "green", "meadow", "and", "laughed", "while", "sun", "rose",
    "over", "hills", "quietly", "little", "friend", "found", "river", "apples", "village", "wind", "sang",
];
const NAMES: &[&str] = &["Smith", "Brown", "Lee", "Oak"];
const ABBREVIATIONS: &[&str] = &["Mr.", "Mrs.", "Dr.", "Ms.", "St."];

/// One synthetic sentence; may contain abbreviations and decimal numbers.
pub fn sentence() -> impl Strategy<Value = String> {
    (
        prop::collection::vec(prop::sample::select(WORDS), 2..12),
        prop::option::of((prop::sample::select(ABBREVIATIONS), prop::sample::select(NAMES))),
        prop::option::of((1u32..100, 1u32..10)),
        prop::sample::select(&[".", "!", "?", "?!", "..."][..]),
        any::<bool>(),
    )
        .prop_map(|(words, abbrev, number, end, quoted)| {
            let mut parts: Vec<String> = words.iter().map(|w| w.to_string()).collect();
            if let Some((a, n)) = abbrev {
                parts.insert(1.min(parts.len()), format!("{a} {n}"));
            }
            if let Some((int, frac)) = number {
                parts.insert(parts.len() / 2, format!("{int}.{frac}"));
            }
            let mut s = parts.join(" ");
            s[..1].make_ascii_uppercase();
            s.push_str(end);
            if quoted {
                format!("\"{s}\"")
            } else {
                s
            }
        })
}

/// Sentences joined with assorted whitespace.
pub fn story() -> impl Strategy<Value = (Vec<String>, String)> {
    prop::collection::vec((sentence(), prop::sample::select(&[" ", "  ", "\n", " \n\n", "\t"][..])), 1..25)
        .prop_map(|parts| {
            let sentences: Vec<String> = parts.iter().map(|(s, _)| s.clone()).collect();
            let text = parts
                .iter()
                .enumerate()
                .map(|(i, (s, sep))| if i + 1 == parts.len() { s.clone() } else { format!("{s}{sep}") })
                .collect::<String>();
            (sentences, text)
        })
}

pub fn check_segmentation(sentences: &[String], text: &str) -> Result<(), TestCaseError> {
    let segmented = segment_sentences(text);
    let got: Vec<&str> = segmented.iter().map(|s| s.text.as_str()).collect();
    prop_assert_eq!(&got, &sentences.iter().map(String::as_str).collect::<Vec<_>>());
    let joined = got.join(" ");
    prop_assert_eq!(normalize_whitespace(&joined), normalize_whitespace(text));
    for s in &segmented {
        prop_assert_eq!(&text[s.char_span.0..s.char_span.1], s.text.as_str());
    }
    Ok(())
}

/// Runs `check` over `strategy` and returns a one-line reason on failure.
pub fn run_property<S: Strategy>(
    cases: u32,
    strategy: S,
    check: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner(cases).run(&strategy, check).map_err(|e| e.to_string())
}
