//! Stage-by-stage execution against a project.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use crate::assets::{write_atomic, AudioAsset};
use crate::camera::default_camera_path;
use crate::compose::compose_scene_frames;
use crate::config::{PipelineConfig, DEFAULT_AUTOMATED_CANDIDATES, DEFAULT_CURATED_CANDIDATES};
use crate::curation::{auto_select, generate_candidates, SelectionPolicy};
use crate::error::{Error, Result};
use crate::gateway::{BackendKind, CallStats, Gateway, MusicPreset, TextParams};
use crate::hashing::{seed_from, sha256_hex};
use crate::media::Pcm;
use crate::parallel::par_map;
use crate::render::{emit_subtitles, render_video, RENDERS_DIR};
use crate::store::{MixRecord, MusicRecord, Project, RenderRecord, SceneSpec, Stage, LOGS_DIR};
use crate::story::{generate_scene_descriptions, generate_story, StoryRequest};
use crate::timeline::{envelope_csv, fit_music, layout_speech, mix, scene_frame_counts, scene_spans, split_by_characters};

pub const FINAL_VIDEO: &str = "renders/final.mp4";
pub const FINAL_SUBTITLES: &str = "renders/final.srt";

/// How many candidates to make and how to pick among them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Automated,
    Curated,
}

impl RunMode {
    fn default_candidates(self) -> usize {
        match self {
            RunMode::Automated => DEFAULT_AUTOMATED_CANDIDATES,
            RunMode::Curated => DEFAULT_CURATED_CANDIDATES,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub resumed_from: Option<Stage>,
    pub stages_run: Vec<Stage>,
    pub stats: BTreeMap<BackendKind, CallStats>,
    pub backend_calls: u64,
    pub final_video: Option<String>,
}

type StageHook = Box<dyn Fn(Stage) + Send + Sync>;

pub struct Pipeline {
    pub project: Project,
    pub gateway: Gateway,
    after_commit: Option<StageHook>,
}

pub fn build_gateway(root: &Path, config: &PipelineConfig) -> Result<Gateway> {
    Gateway::from_endpoints(crate::assets::AssetStore::new(root), &config.resolved_endpoints()?, &config.ffmpeg)
}

impl Pipeline {
    pub fn new(project: Project) -> Result<Self> {
        let gateway = build_gateway(project.root(), &project.manifest.config)?;
        let mut pipeline = Self {
            project,
            gateway,
            after_commit: None,
        };
        pipeline.project.manifest.fingerprints = pipeline.gateway.fingerprints();
        Ok(pipeline)
    }

    /// Starts a new project at `root`.
    pub fn create(root: &Path, request: StoryRequest, config: PipelineConfig, force: bool) -> Result<Self> {
        config.validate()?;
        Self::new(Project::init(root, request, config, force)?)
    }

    /// Opens an existing project, optionally replacing its recorded config.
    pub fn open(root: &Path, config: Option<PipelineConfig>) -> Result<Self> {
        let mut project = Project::open(root)?;
        if let Some(config) = config {
            config.validate()?;
            project.manifest.mix_config = config.mix.clone();
            project.manifest.config = config;
        }
        Self::new(project)
    }

    /// Opens the project at `root` when it was made from the same request,
    /// otherwise creates it (replacing a different one only with `force`).
    pub fn open_or_create(root: &Path, request: StoryRequest, config: PipelineConfig, force: bool) -> Result<Self> {
        if Project::exists(root) {
            let existing = Project::read_manifest(root)?;
            if existing.request == request && !force {
                return Self::open(root, Some(config));
            }
            if !force {
                return Err(Error::Project(format!(
                    "{} holds a project for a different request; pass --force to replace it",
                    root.display()
                )));
            }
        }
        Self::create(root, request, config, force)
    }

    /// Called after each stage is committed to disk.
    pub fn set_after_commit(&mut self, hook: impl Fn(Stage) + Send + Sync + 'static) {
        self.after_commit = Some(Box::new(hook));
    }

    /// Hands back the project and gateway, e.g. to serve them.
    pub fn into_parts(self) -> (Project, Gateway) {
        (self.project, self.gateway)
    }

    /// Rebuilds a pipeline from parts returned by [`Pipeline::into_parts`].
    pub fn from_parts(project: Project, gateway: Gateway) -> Self {
        Self {
            project,
            gateway,
            after_commit: None,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.project.manifest.config
    }

    fn commit(&mut self, stage: Stage) -> Result<()> {
        self.project.manifest.mark_done(stage)?;
        self.project.save()?;
        if let Some(hook) = &self.after_commit {
            hook(stage);
        }
        Ok(())
    }

    /// Runs one stage if it is not already done, or always with `redo`.
    pub fn run_stage(&mut self, stage: Stage, mode: RunMode, redo: bool) -> Result<bool> {
        self.project.resume_point()?;
        if self.project.manifest.is_done(stage) && !redo {
            return Ok(false);
        }
        self.execute(stage, mode)?;
        Ok(true)
    }

    fn execute(&mut self, stage: Stage, mode: RunMode) -> Result<()> {
        self.project.manifest.require(stage)?;
        info!("stage {stage}");
        let result = match stage {
            Stage::Story => self.stage_story(),
            Stage::Descriptions => self.stage_descriptions(),
            Stage::Candidates => self.stage_candidates(mode),
            Stage::Selection => self.stage_selection(mode),
            Stage::Speech => self.stage_speech(),
            Stage::Music => self.stage_music(None),
            Stage::Scenes => self.stage_scenes(),
            Stage::Mix => self.stage_mix(),
            Stage::Render => self.stage_render(),
        };
        match result {
            Ok(true) => self.commit(stage),
            Ok(false) => {
                self.project.save()?;
                Ok(())
            }
            Err(e) => {
                self.project.manifest.mark_failed(stage, &e.to_string());
                let _ = self.project.save();
                Err(e.in_stage(stage))
            }
        }
    }

    /// Runs every stage that is not done, in order, selecting candidate 0
    /// for each scene. Stops after `stop_after` when given.
    pub fn run_auto(&mut self, stop_after: Option<Stage>) -> Result<RunReport> {
        let resumed_from = self.project.resume_point()?;
        self.gateway.reset_stats();
        let mut stages_run = Vec::new();
        if let Some(start) = resumed_from {
            for stage in Stage::ALL.into_iter().filter(|s| *s >= start) {
                if !self.project.manifest.is_done(stage) {
                    self.execute(stage, RunMode::Automated)?;
                    stages_run.push(stage);
                }
                if Some(stage) == stop_after {
                    break;
                }
            }
        }
        let report = self.report(resumed_from, stages_run);
        self.write_report(&report)?;
        Ok(report)
    }

    pub fn report(&self, resumed_from: Option<Stage>, stages_run: Vec<Stage>) -> RunReport {
        RunReport {
            resumed_from,
            stages_run,
            stats: self.gateway.stats(),
            backend_calls: self.gateway.total_calls(),
            final_video: self.project.manifest.render.as_ref().map(|r| r.video.path.clone()),
        }
    }

    /// Writes the run summary to `logs/last_run.json`.
    pub fn write_report(&self, report: &RunReport) -> Result<()> {
        let dir = self.project.root().join(LOGS_DIR);
        std::fs::create_dir_all(&dir)?;
        write_atomic(&dir.join("last_run.json"), serde_json::to_string_pretty(report)?.as_bytes())
    }

    pub fn final_video_path(&self) -> Option<PathBuf> {
        self.project.manifest.render.as_ref().map(|r| self.project.root().join(&r.video.path))
    }

    fn stage_story(&mut self) -> Result<bool> {
        let m = &self.project.manifest;
        let story = generate_story(&m.request, &self.gateway, m.config.text.story_max_tokens)?;
        let m = &mut self.project.manifest;
        if m.story.as_ref() != Some(&story) {
            m.scenes = (0..story.sentences.len())
                .map(|i| SceneSpec::new(i, default_camera_path(i)))
                .collect();
            m.story = Some(story);
        }
        Ok(true)
    }

    fn stage_descriptions(&mut self) -> Result<bool> {
        let m = &self.project.manifest;
        let story = m.story.as_ref().expect("story stage done");
        let params = TextParams {
            max_tokens: m.config.text.description_max_tokens,
            seed: m.request.seed,
        };
        let descriptions =
            generate_scene_descriptions(story, &m.config.style, &self.gateway, &params, m.config.parallelism)?;
        for (scene, description) in self.project.manifest.scenes.iter_mut().zip(descriptions) {
            if scene.description.as_ref() != Some(&description) {
                let camera_path = scene.camera_path.clone();
                *scene = SceneSpec::new(scene.sentence_index, camera_path);
                scene.description = Some(description);
            }
        }
        Ok(true)
    }

    fn stage_candidates(&mut self, mode: RunMode) -> Result<bool> {
        let n = self.config().candidates_or(mode.default_candidates());
        let parallelism = self.config().parallelism;
        let outcomes = generate_candidates(&mut self.project.manifest, &self.gateway, n, parallelism)?;
        let failures: usize = outcomes.iter().map(|o| o.failures.len()).sum();
        if failures > 0 {
            log::warn!("{failures} candidate(s) failed; the rest were kept");
        }
        Ok(true)
    }

    fn stage_selection(&mut self, mode: RunMode) -> Result<bool> {
        let policy = match mode {
            RunMode::Automated => SelectionPolicy::First,
            RunMode::Curated => SelectionPolicy::None,
        };
        self.select(policy)?;
        Ok(false)
    }

    /// Applies a selection policy; the stage completes once every scene is selected.
    pub fn select(&mut self, policy: SelectionPolicy) -> Result<()> {
        self.project.manifest.require(Stage::Selection)?;
        let was_done = self.project.manifest.is_done(Stage::Selection);
        auto_select(&mut self.project.manifest, policy)?;
        self.project.save()?;
        if !was_done && self.project.manifest.is_done(Stage::Selection) {
            if let Some(hook) = &self.after_commit {
                hook(Stage::Selection);
            }
        }
        Ok(())
    }

    /// Selects one candidate for one scene.
    pub fn select_one(&mut self, scene: usize, candidate: usize) -> Result<bool> {
        self.project.manifest.require(Stage::Selection)?;
        let changed = crate::curation::select_candidate(&mut self.project.manifest, scene, candidate)?;
        self.project.save()?;
        Ok(changed)
    }

    fn stage_speech(&mut self) -> Result<bool> {
        let m = &self.project.manifest;
        let story = m.story.as_ref().expect("story stage done");
        let cfg = &m.config.speech;
        let seed = m.request.seed;
        let clips: Vec<AudioAsset> = if cfg.whole_story {
            let whole = self
                .gateway
                .synthesize_speech(&story.full_text, &cfg.voice, cfg.length_scale, seed)?;
            let pcm = Pcm::read_wav(&self.gateway.store().abs(&whole.path))?;
            let chars: Vec<usize> = story.sentences.iter().map(|s| s.text.chars().count()).collect();
            split_by_characters(pcm.duration(), 0.0, &chars)
                .into_iter()
                .map(|(s, e)| {
                    let a = (s * pcm.sample_rate as f64).round() as usize;
                    let b = ((e * pcm.sample_rate as f64).round() as usize).min(pcm.frames()).max(a + 1);
                    let piece = Pcm {
                        sample_rate: pcm.sample_rate,
                        channels: pcm.channels,
                        samples: pcm.samples[a * pcm.channels as usize..b * pcm.channels as usize].to_vec(),
                    };
                    self.gateway.store().put_audio(&piece.encode_wav())
                })
                .collect::<Result<_>>()?
        } else {
            par_map(&story.sentences, m.config.parallelism, |_, s| {
                self.gateway.synthesize_speech(&s.text, &cfg.voice, cfg.length_scale, seed)
            })
            .into_iter()
            .collect::<Result<_>>()?
        };
        let (segments, total) = layout_speech(&clips, &m.config.mix)?;
        let m = &mut self.project.manifest;
        m.speech = segments;
        m.total_duration = Some(total);
        Ok(true)
    }

    /// Generates, separates and fits the music. `preset` overrides the config.
    pub fn stage_music(&mut self, preset: Option<&str>) -> Result<bool> {
        let m = &self.project.manifest;
        let label = preset.unwrap_or(&m.config.music.preset).to_string();
        let preset = MusicPreset::parse(&label);
        let seed = seed_from(&[b"music", &m.request.seed.to_le_bytes()]) >> 1;
        let total = m.total_duration.expect("speech stage done");
        let raw = self.gateway.generate_music(&preset, m.config.music.duration, seed)?;
        let (vocals, instruments) = if m.config.music.separate_vocals {
            let (v, i) = self.gateway.separate_vocals(&raw)?;
            (Some(v), Some(i))
        } else {
            (None, None)
        };
        let source = instruments.as_ref().unwrap_or(&raw);
        let fitted = fit_music(self.gateway.store(), source, total, &m.config.mix)?;
        self.project.manifest.music = Some(MusicRecord {
            preset: preset.label().to_string(),
            seed,
            raw,
            vocals,
            instruments,
            fitted,
        });
        Ok(true)
    }

    /// Runs the music stage with an explicit preset.
    pub fn run_music(&mut self, preset: Option<&str>) -> Result<()> {
        self.project.manifest.require(Stage::Music)?;
        match self.stage_music(preset) {
            Ok(_) => self.commit(Stage::Music),
            Err(e) => {
                self.project.manifest.mark_failed(Stage::Music, &e.to_string());
                let _ = self.project.save();
                Err(e.in_stage(Stage::Music))
            }
        }
    }

    fn stage_scenes(&mut self) -> Result<bool> {
        let m = &self.project.manifest;
        let total = m.total_duration.expect("speech stage done");
        let fps = m.config.fps;
        let spans = scene_spans(&m.speech, total);
        let frames = scene_frame_counts(&spans, fps);
        let opts = m.config.compose_options();
        let store = self.gateway.store();
        let jobs: Vec<usize> = (0..m.scenes.len()).collect();
        let results = par_map(&jobs, m.config.parallelism, |_, &i| {
            let scene = &m.scenes[i];
            let image = scene.selected().ok_or_else(|| Error::Dependency {
                stage: Stage::Scenes,
                missing: Stage::Selection,
            })?;
            compose_scene_frames(&self.gateway, image, &scene.camera_path, frames[i], fps, &opts)
        });
        let mut composed = Vec::with_capacity(results.len());
        for r in results {
            composed.push(r?);
        }
        let m = &mut self.project.manifest;
        for (i, c) in composed.into_iter().enumerate() {
            let scene = &mut m.scenes[i];
            scene.duration = spans[i].1 - spans[i].0;
            scene.frames = frames[i];
            debug_assert!(store.verify_asset(&c.video));
            scene.rendered = Some(c.video);
            m.transcripts.insert(format!("scene_{i:03}"), c.commands);
        }
        Ok(true)
    }

    fn stage_mix(&mut self) -> Result<bool> {
        let m = &self.project.manifest;
        let total = m.total_duration.expect("speech stage done");
        let music = m.music.as_ref().expect("music stage done");
        let (audio, envelope) = mix(self.gateway.store(), &m.speech, &music.fitted, total, &m.mix_config)?;
        let envelope_path = if m.config.envelope_csv {
            let rel = format!("{RENDERS_DIR}/envelope.csv");
            let root = self.project.root();
            std::fs::create_dir_all(root.join(RENDERS_DIR))?;
            write_atomic(&root.join(&rel), envelope_csv(&envelope, crate::media::MIX_SAMPLE_RATE, 441).as_bytes())?;
            Some(rel)
        } else {
            None
        };
        self.project.manifest.mix = Some(MixRecord {
            audio,
            envelope_csv: envelope_path,
        });
        Ok(true)
    }

    fn stage_render(&mut self) -> Result<bool> {
        let m = &self.project.manifest;
        let mut videos = Vec::with_capacity(m.scenes.len());
        for scene in &m.scenes {
            if scene.selected_index.is_none() {
                return Err(Error::Dependency {
                    stage: Stage::Render,
                    missing: Stage::Selection,
                });
            }
            videos.push(scene.rendered.clone().ok_or_else(|| Error::Dependency {
                stage: Stage::Render,
                missing: Stage::Scenes,
            })?);
        }
        let audio = &m.mix.as_ref().expect("mix stage done").audio;
        let (video, command) = render_video(&m.config.ffmpeg, self.gateway.store(), &videos, audio, FINAL_VIDEO)?;
        let story = m.story.as_ref().expect("story stage done");
        let srt_path = self.project.root().join(FINAL_SUBTITLES);
        emit_subtitles(story, &m.speech, &srt_path)?;
        let subtitles_hash = sha256_hex(&std::fs::read(&srt_path)?);
        let m = &mut self.project.manifest;
        m.transcripts.insert("render".into(), vec![command]);
        m.render = Some(RenderRecord {
            video,
            subtitles: FINAL_SUBTITLES.into(),
            subtitles_hash,
        });
        Ok(true)
    }
}
