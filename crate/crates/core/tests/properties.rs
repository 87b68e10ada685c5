mod common;

use common::props::*;
use proptest::prelude::*;
use storyreel::camera::{frame_plan, CameraPath};
use storyreel::timeline::{layout_speech, scene_frame_counts, scene_spans, split_by_characters, MixConfig};

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn crop_stays_inside_image(path in camera_path(), size in image_size(), ts in sample_times()) {
        check_bounds(&path, size, &ts)?;
    }

    #[test]
    fn monotone_keyframes_give_monotone_zoom((path, rising) in monotone_zoom_path()) {
        check_monotone(&path, rising)?;
    }

    #[test]
    fn keyframes_are_hit_exactly(path in camera_path()) {
        check_endpoints(&path)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mix_never_clips_and_has_exact_length(case in mix_case()) {
        check_mix(&case)?;
    }

    #[test]
    fn segmentation_round_trips((sentences, text) in story()) {
        check_segmentation(&sentences, &text)?;
    }

    #[test]
    fn frame_plans_have_the_requested_length(path in camera_path(), frames in 1u64..200) {
        let plan = frame_plan(&path, 512, 512, frames).unwrap();
        prop_assert_eq!(plan.len() as u64, frames);
        prop_assert!(plan.iter().all(|(r, _)| r.w % 2 == 0 && r.h % 2 == 0 && r.x % 2 == 0 && r.y % 2 == 0));
    }

    #[test]
    fn scene_frames_add_up(durations in prop::collection::vec(0.2f64..12.0, 1..20), fps in 10u32..=60) {
        let clips: Vec<_> = durations
            .iter()
            .map(|&d| storyreel::assets::AudioAsset {
                content_hash: "0".repeat(64),
                path: String::new(),
                sample_rate: 22_050,
                channels: 1,
                frames: (d * 22_050.0) as u64,
                duration: d,
            })
            .collect();
        let cfg = MixConfig::default();
        let (segments, total) = layout_speech(&clips, &cfg).unwrap();
        for w in segments.windows(2) {
            prop_assert!(w[1].start > w[0].start);
            prop_assert!((w[1].start - w[0].end() - cfg.inter_sentence_pause).abs() < 1e-9);
        }
        let spans = scene_spans(&segments, total);
        let frames = scene_frame_counts(&spans, fps);
        prop_assert_eq!(frames.iter().sum::<u64>(), (total * fps as f64).round() as u64);
        for ((s, e), n) in spans.iter().zip(&frames) {
            prop_assert!(((e - s) * fps as f64 - *n as f64).abs() <= 1.0);
        }
    }

    #[test]
    fn character_split_covers_the_narration(chars in prop::collection::vec(1usize..300, 1..30), duration in 0.5f64..120.0) {
        let spans = split_by_characters(duration, 0.0, &chars);
        prop_assert_eq!(spans.len(), chars.len());
        prop_assert!((spans.last().unwrap().1 - duration).abs() < 1e-6);
        for w in spans.windows(2) {
            prop_assert!((w[0].1 - w[1].0).abs() < 1e-9);
        }
    }
}

#[test]
fn still_paths_are_constant() {
    let path = CameraPath::still(1.7, 0.3, 0.8).unwrap();
    let plan = frame_plan(&path, 640, 480, 50).unwrap();
    assert!(plan.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn duck_depth_matches_config() {
    for extra in [-3.0, -8.0, -14.0] {
        let cfg = MixConfig { duck_extra_db: extra, ..MixConfig::default() };
        let db = measured_duck_db(&cfg);
        assert!((db - extra).abs() <= 0.5, "configured {extra} dB, measured {db:.3} dB");
    }
}
