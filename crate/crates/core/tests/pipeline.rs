mod common;

use std::collections::BTreeSet;
use std::sync::Arc;

use storyreel::assets::AssetStore;
use storyreel::camera::default_camera_path;
use storyreel::config::PipelineConfig;
use storyreel::curation::{candidate_seed_base, generate_candidates, SelectionPolicy};
use storyreel::error::{BackendError, Error};
use storyreel::gateway::mock::MockBackend;
use storyreel::gateway::{Backend, BackendCall, BackendEndpoint, BackendKind, BackendOutput, Gateway};
use storyreel::pipeline::{Pipeline, RunMode};
use storyreel::store::{Project, ProjectManifest, SceneSpec, Stage};
use storyreel::story::{GenrePreset, SceneDescription, StoryRequest};

fn request() -> StoryRequest {
    StoryRequest::new("boy", "horse", 42, GenrePreset::Children).unwrap()
}

fn config() -> PipelineConfig {
    common::small_config()
}

/// Mock image backend that fails for chosen seeds.
struct Flaky {
    inner: MockBackend,
    fail: BTreeSet<u64>,
}

impl Backend for Flaky {
    fn invoke(&self, call: &BackendCall<'_>) -> Result<BackendOutput, BackendError> {
        if self.fail.contains(&call.request.seed()) {
            return Err(BackendError::Failed("safety filter tripped".into()));
        }
        self.inner.invoke(call)
    }
}

fn flaky_gateway(dir: &std::path::Path, fail: BTreeSet<u64>) -> Gateway {
    let mut ep = BackendEndpoint::mock(BackendKind::Image);
    ep.max_retries = 0;
    Gateway::new(AssetStore::new(dir))
        .with_backend(
            ep,
            Arc::new(Flaky {
                inner: MockBackend::new(BackendKind::Image, "ffmpeg"),
                fail,
            }),
        )
        .unwrap()
}

fn one_scene_manifest() -> ProjectManifest {
    let mut m = ProjectManifest::new(request(), config());
    let mut s = SceneSpec::new(0, default_camera_path(0));
    s.description = Some(SceneDescription {
        sentence_index: 0,
        description_text: "a boy and a horse".into(),
        augmented_prompt: "a boy and a horse, 4k".into(),
    });
    m.scenes.push(s);
    m
}

#[test]
fn three_failures_among_a_hundred_keep_ninety_seven() {
    let dir = tempfile::tempdir().unwrap();
    let base = candidate_seed_base(42, 0);
    let g = flaky_gateway(dir.path(), [5, 50, 77].iter().map(|k| base + k).collect());
    let mut m = one_scene_manifest();
    let outcomes = generate_candidates(&mut m, &g, 100, 8).unwrap();
    assert_eq!(outcomes[0].added, 97);
    assert_eq!(outcomes[0].failures.len(), 3);
    let s = &m.scenes[0];
    assert_eq!(s.candidates.len(), 97);
    assert_eq!(s.failures.iter().map(|f| f.seed - base).collect::<Vec<_>>(), [5, 50, 77]);
    assert!(s.failures[0].error.contains("safety filter"));
    assert_eq!(s.seeds_used, 100);
    assert!(!s.candidate_seeds.contains(&(base + 5)));
}

#[test]
fn a_scene_with_no_successful_candidate_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let base = candidate_seed_base(42, 0);
    let g = flaky_gateway(dir.path(), (0..3).map(|k| base + k).collect());
    let mut m = one_scene_manifest();
    let err = generate_candidates(&mut m, &g, 3, 2).unwrap_err();
    assert!(err.to_string().contains("scene 0"), "{err}");
}

#[test]
fn stages_refuse_to_run_before_their_prerequisites() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::create(dir.path(), request(), config(), false).unwrap();
    let err = p.run_stage(Stage::Render, RunMode::Automated, false).unwrap_err();
    assert!(matches!(err, Error::Dependency { stage: Stage::Render, missing: Stage::Story }), "{err}");
    assert_eq!(err.exit_code(), 4);

    p.run_stage(Stage::Story, RunMode::Automated, false).unwrap();
    let m = &p.project.manifest;
    assert!(m.story.is_some());
    assert!(m.is_done(Stage::Story));
    assert!(!m.is_done(Stage::Descriptions));
    assert_eq!(m.scenes.len(), m.story.as_ref().unwrap().sentences.len());

    let err = p.run_stage(Stage::Music, RunMode::Automated, false).unwrap_err();
    assert!(matches!(err, Error::Dependency { missing: Stage::Speech, .. }), "{err}");
}

#[test]
fn auto_matches_running_each_stage_in_turn() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        candidates: Some(1),
        ..config()
    };
    let mut auto = Pipeline::create(a.path(), request(), cfg.clone(), false).unwrap();
    auto.run_auto(None).unwrap();

    let mut manual = Pipeline::create(b.path(), request(), cfg, false).unwrap();
    for stage in [Stage::Story, Stage::Descriptions, Stage::Candidates] {
        manual.run_stage(stage, RunMode::Curated, false).unwrap();
    }
    manual.select(SelectionPolicy::First).unwrap();
    for stage in [Stage::Speech, Stage::Music, Stage::Scenes, Stage::Mix, Stage::Render] {
        manual.run_stage(stage, RunMode::Automated, false).unwrap();
    }
    assert_eq!(
        auto.project.manifest.to_json().unwrap(),
        manual.project.manifest.to_json().unwrap()
    );
}

#[test]
fn reselecting_one_scene_rerenders_only_that_scene() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        candidates: Some(2),
        ..config()
    };
    let mut p = Pipeline::create(dir.path(), request(), cfg, false).unwrap();
    p.run_auto(None).unwrap();
    let before: Vec<_> = p.project.manifest.scenes.iter().map(|s| s.rendered.clone().unwrap()).collect();
    let old_render = p.project.manifest.render.clone().unwrap();

    assert!(p.select_one(1, 1).unwrap());
    assert!(p.project.manifest.scenes[1].rendered.is_none());
    assert!(p.project.manifest.scenes[0].rendered.is_some());
    assert!(!p.project.manifest.is_done(Stage::Scenes));
    assert!(!p.project.manifest.is_done(Stage::Render));
    assert!(p.project.manifest.is_done(Stage::Mix));

    let report = p.run_auto(None).unwrap();
    assert_eq!(report.stages_run, [Stage::Scenes, Stage::Render]);
    assert_eq!(report.backend_calls, 0);
    let after: Vec<_> = p.project.manifest.scenes.iter().map(|s| s.rendered.clone().unwrap()).collect();
    for (i, (a, b)) in before.iter().zip(&after).enumerate() {
        assert_eq!(a == b, i != 1, "scene {i}");
    }
    assert_ne!(p.project.manifest.render.as_ref().unwrap().video.content_hash, old_render.video.content_hash);
}

#[test]
fn damaged_assets_are_regenerated_on_resume() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::create(dir.path(), request(), config(), false).unwrap();
    p.run_auto(None).unwrap();
    let final_hash = p.project.manifest.render.as_ref().unwrap().video.content_hash.clone();
    let fitted = p.project.manifest.music.as_ref().unwrap().fitted.path.clone();
    drop(p);

    std::fs::remove_file(dir.path().join(&fitted)).unwrap();
    let mut p = Pipeline::open(dir.path(), None).unwrap();
    let report = p.run_auto(None).unwrap();
    assert_eq!(report.resumed_from, Some(Stage::Music));
    assert_eq!(report.stages_run, [Stage::Music]);
    assert!(dir.path().join(&fitted).is_file());
    assert_eq!(p.project.manifest.render.as_ref().unwrap().video.content_hash, final_hash);
}

#[test]
fn a_changed_request_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    drop(Pipeline::create(dir.path(), request(), config(), false).unwrap());
    let other = StoryRequest::new("girl", "dog", 42, GenrePreset::Children).unwrap();
    assert!(matches!(
        Pipeline::open_or_create(dir.path(), other.clone(), config(), false),
        Err(Error::Project(_))
    ));
    let p = Pipeline::open_or_create(dir.path(), other.clone(), config(), true).unwrap();
    assert_eq!(p.project.manifest.request, other);
}

#[test]
fn a_second_process_cannot_open_a_locked_project() {
    let dir = tempfile::tempdir().unwrap();
    let _held = Pipeline::create(dir.path(), request(), config(), false).unwrap();
    let child = std::process::Command::new(common::bin())
        .args(["--project", dir.path().to_str().unwrap(), "story"])
        .output()
        .unwrap();
    assert!(!child.status.success());
    assert!(common::stderr(&child).contains("lock"), "{}", common::stderr(&child));
}

#[test]
fn whole_story_narration_is_split_per_sentence() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config();
    cfg.speech.whole_story = true;
    let mut p = Pipeline::create(dir.path(), request(), cfg, false).unwrap();
    p.run_auto(Some(Stage::Speech)).unwrap();
    let m = &p.project.manifest;
    let n = m.story.as_ref().unwrap().sentences.len();
    assert_eq!(m.speech.len(), n);
    assert!(m.speech.iter().all(|s| s.audio.duration > 0.0));
    assert_eq!(p.gateway.stats()[&BackendKind::Tts].calls, 1);
    assert!(!m.is_done(Stage::Music));
}

#[test]
fn music_preset_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::create(dir.path(), request(), config(), false).unwrap();
    p.run_auto(Some(Stage::Speech)).unwrap();
    p.run_music(Some("raffi")).unwrap();
    assert_eq!(p.project.manifest.music.as_ref().unwrap().preset, "raffi");
    p.run_music(Some("The Wiggles")).unwrap();
    assert_eq!(p.project.manifest.music.as_ref().unwrap().preset, "the wiggles");
    assert_eq!(p.gateway.stats()[&BackendKind::Music].calls, 2);
    let on_disk = Project::read_manifest(dir.path()).unwrap();
    assert!(on_disk.is_done(Stage::Music));
}

#[test]
fn subtitles_follow_the_narration() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = Pipeline::create(dir.path(), request(), config(), false).unwrap();
    p.run_auto(None).unwrap();
    let m = &p.project.manifest;
    let srt = std::fs::read_to_string(dir.path().join(&m.render.as_ref().unwrap().subtitles)).unwrap();
    let cues = srt.split("\n\n").filter(|c| !c.trim().is_empty()).count();
    assert_eq!(cues, m.story.as_ref().unwrap().sentences.len());
    assert!(srt.starts_with("1\n00:00:00,500 --> "));
}
