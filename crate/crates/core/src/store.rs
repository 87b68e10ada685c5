//! Project directory, manifest and stage bookkeeping.
//!
//! Layout under the project root:
//!
//! ```text
//! manifest.json          canonical JSON, no timestamps, relative paths only
//! project.lock           pid of the process holding the project
//! assets/<hh>/<hash>.*   content-addressed artifacts
//! cache/                 request-hash -> artifact records
//! renders/final.mp4      deliverable video
//! renders/final.srt      subtitles
//! logs/                  run summaries
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::assets::{write_atomic, AssetStore, AudioAsset, ImageAsset, VideoAsset, ASSETS_DIR};
use crate::camera::CameraPath;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::gateway::{BackendKind, CACHE_DIR};
use crate::hashing::hash_canonical;
use crate::render::RENDERS_DIR;
use crate::story::{SceneDescription, Story, StoryRequest};
use crate::timeline::{MixConfig, SpeechSegment};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOCK_FILE: &str = "project.lock";
pub const LOGS_DIR: &str = "logs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Story,
    Descriptions,
    Candidates,
    Selection,
    Speech,
    Music,
    Scenes,
    Mix,
    Render,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Story,
        Stage::Descriptions,
        Stage::Candidates,
        Stage::Selection,
        Stage::Speech,
        Stage::Music,
        Stage::Scenes,
        Stage::Mix,
        Stage::Render,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Story => "story",
            Stage::Descriptions => "descriptions",
            Stage::Candidates => "candidates",
            Stage::Selection => "selection",
            Stage::Speech => "speech",
            Stage::Music => "music",
            Stage::Scenes => "scenes",
            Stage::Mix => "mix",
            Stage::Render => "render",
        }
    }

    pub fn parse(s: &str) -> Result<Stage> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }

    /// Stages whose output this stage consumes.
    pub fn dependencies(self) -> &'static [Stage] {
        match self {
            Stage::Story => &[],
            Stage::Descriptions => &[Stage::Story],
            Stage::Candidates => &[Stage::Descriptions],
            Stage::Selection => &[Stage::Candidates],
            Stage::Speech => &[Stage::Story],
            Stage::Music => &[Stage::Speech],
            Stage::Scenes => &[Stage::Selection, Stage::Speech],
            Stage::Mix => &[Stage::Speech, Stage::Music],
            Stage::Render => &[Stage::Scenes, Stage::Mix],
        }
    }

    /// Every stage that directly or indirectly consumes this one.
    pub fn dependents(self) -> Vec<Stage> {
        let mut out: Vec<Stage> = Vec::new();
        for st in Stage::ALL {
            if st.dependencies().iter().any(|d| *d == self || out.contains(d)) {
                out.push(st);
            }
        }
        out
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum StageStatus {
    #[default]
    Pending,
    Done {
        digest: String,
    },
    Failed {
        reason: String,
    },
    /// Was done, but its outputs no longer check out. Keeps the old digest
    /// so dependents survive a re-run that reproduces the same outputs.
    Stale {
        digest: String,
        reason: String,
    },
}

impl StageStatus {
    pub fn is_done(&self) -> bool {
        matches!(self, StageStatus::Done { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurationStatus {
    Pending,
    Generating,
    AwaitingSelection,
    Selected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub sentence_index: usize,
    pub description: Option<SceneDescription>,
    pub candidates: Vec<ImageAsset>,
    /// Seed used for each candidate, parallel to `candidates`.
    pub candidate_seeds: Vec<u64>,
    /// Seeds attempted so far, including failed ones.
    pub seeds_used: u64,
    pub failures: Vec<CandidateFailure>,
    pub selected_index: Option<usize>,
    pub camera_path: CameraPath,
    /// Seconds on the final timeline; 0 until narration is laid out.
    pub duration: f64,
    pub frames: u64,
    pub rendered: Option<VideoAsset>,
}

impl SceneSpec {
    pub fn new(sentence_index: usize, camera_path: CameraPath) -> Self {
        Self {
            sentence_index,
            description: None,
            candidates: Vec::new(),
            candidate_seeds: Vec::new(),
            seeds_used: 0,
            failures: Vec::new(),
            selected_index: None,
            camera_path,
            duration: 0.0,
            frames: 0,
            rendered: None,
        }
    }

    pub fn status(&self) -> CurationStatus {
        match (self.candidates.is_empty(), self.selected_index) {
            (true, _) => CurationStatus::Pending,
            (false, None) => CurationStatus::AwaitingSelection,
            (false, Some(_)) => CurationStatus::Selected,
        }
    }

    pub fn selected(&self) -> Option<&ImageAsset> {
        self.selected_index.and_then(|i| self.candidates.get(i))
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.selected_index {
            if i >= self.candidates.len() {
                return Err(Error::Contract(format!(
                    "scene {} selects candidate {i} of {}",
                    self.sentence_index,
                    self.candidates.len()
                )));
            }
        } else if self.rendered.is_some() {
            return Err(Error::Contract(format!(
                "scene {} is rendered without a selection",
                self.sentence_index
            )));
        }
        if self.rendered.is_some() && self.duration <= 0.0 {
            return Err(Error::Contract(format!("scene {} has no duration", self.sentence_index)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MusicRecord {
    pub preset: String,
    pub seed: u64,
    pub raw: AudioAsset,
    pub vocals: Option<AudioAsset>,
    pub instruments: Option<AudioAsset>,
    /// Looped or trimmed to the timeline, with fade-out.
    pub fitted: AudioAsset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixRecord {
    pub audio: AudioAsset,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub envelope_csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRecord {
    pub video: VideoAsset,
    pub subtitles: String,
    pub subtitles_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectManifest {
    pub format_version: u32,
    pub request: StoryRequest,
    pub config: PipelineConfig,
    pub story: Option<Story>,
    pub scenes: Vec<SceneSpec>,
    pub speech: Vec<SpeechSegment>,
    pub total_duration: Option<f64>,
    pub music: Option<MusicRecord>,
    pub mix_config: MixConfig,
    pub mix: Option<MixRecord>,
    pub render: Option<RenderRecord>,
    pub fingerprints: BTreeMap<BackendKind, String>,
    pub stage_status: BTreeMap<Stage, StageStatus>,
    /// External tool command lines, keyed by what they produced.
    pub transcripts: BTreeMap<String, Vec<String>>,
}

impl ProjectManifest {
    pub fn new(request: StoryRequest, config: PipelineConfig) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            request,
            mix_config: config.mix.clone(),
            config,
            story: None,
            scenes: Vec::new(),
            speech: Vec::new(),
            total_duration: None,
            music: None,
            mix: None,
            render: None,
            fingerprints: BTreeMap::new(),
            stage_status: Stage::ALL.into_iter().map(|s| (s, StageStatus::Pending)).collect(),
            transcripts: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut out = serde_json::to_string_pretty(self)?;
        out.push('\n');
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let manifest: ProjectManifest =
            serde_json::from_str(text).map_err(|e| Error::Project(format!("unreadable manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Project(format!(
                "manifest format {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        Ok(manifest)
    }

    pub fn status(&self, stage: Stage) -> &StageStatus {
        static PENDING: StageStatus = StageStatus::Pending;
        self.stage_status.get(&stage).unwrap_or(&PENDING)
    }

    pub fn is_done(&self, stage: Stage) -> bool {
        self.status(stage).is_done()
    }

    /// Every stage `stage` consumes directly or indirectly, in pipeline order.
    pub fn prerequisites(stage: Stage) -> Vec<Stage> {
        Stage::ALL
            .into_iter()
            .filter(|s| s.dependents().contains(&stage))
            .collect()
    }

    /// Fails with a dependency error naming the earliest prerequisite of
    /// `stage` that is not done.
    pub fn require(&self, stage: Stage) -> Result<()> {
        match Self::prerequisites(stage).into_iter().find(|d| !self.is_done(*d)) {
            Some(missing) => Err(Error::Dependency {
                stage,
                missing,
            }),
            None => Ok(()),
        }
    }

    /// The part of the manifest a stage is responsible for.
    pub fn stage_output(&self, stage: Stage) -> serde_json::Value {
        match stage {
            Stage::Story => json!(self.story),
            Stage::Descriptions => json!(self.scenes.iter().map(|s| &s.description).collect::<Vec<_>>()),
            Stage::Candidates => json!(self
                .scenes
                .iter()
                .map(|s| json!([s.candidates, s.candidate_seeds, s.failures]))
                .collect::<Vec<_>>()),
            Stage::Selection => json!(self.scenes.iter().map(|s| s.selected_index).collect::<Vec<_>>()),
            Stage::Speech => json!([self.speech, self.total_duration]),
            Stage::Music => json!(self.music),
            Stage::Scenes => json!(self
                .scenes
                .iter()
                .map(|s| json!([s.camera_path, s.duration, s.frames, s.rendered]))
                .collect::<Vec<_>>()),
            Stage::Mix => json!(self.mix),
            Stage::Render => json!(self.render),
        }
    }

    pub fn stage_digest(&self, stage: Stage) -> Result<String> {
        hash_canonical(&self.stage_output(stage))
    }

    /// Assets a done stage vouches for, as `(relative path, hash)`.
    pub fn stage_files(&self, stage: Stage) -> Vec<(String, String)> {
        let pair = |path: &str, hash: &str| (path.to_string(), hash.to_string());
        match stage {
            Stage::Candidates => self
                .scenes
                .iter()
                .flat_map(|s| s.candidates.iter().map(|c| pair(&c.path, &c.content_hash)))
                .collect(),
            Stage::Speech => self.speech.iter().map(|s| pair(&s.audio.path, &s.audio.content_hash)).collect(),
            Stage::Music => self
                .music
                .iter()
                .flat_map(|m| {
                    [Some(&m.raw), m.vocals.as_ref(), m.instruments.as_ref(), Some(&m.fitted)]
                        .into_iter()
                        .flatten()
                        .map(|a| pair(&a.path, &a.content_hash))
                })
                .collect(),
            Stage::Scenes => self
                .scenes
                .iter()
                .filter_map(|s| s.rendered.as_ref())
                .map(|v| pair(&v.path, &v.content_hash))
                .collect(),
            Stage::Mix => self.mix.iter().map(|m| pair(&m.audio.path, &m.audio.content_hash)).collect(),
            Stage::Render => self
                .render
                .iter()
                .flat_map(|r| [pair(&r.video.path, &r.video.content_hash), pair(&r.subtitles, &r.subtitles_hash)])
                .collect(),
            Stage::Story | Stage::Descriptions | Stage::Selection => Vec::new(),
        }
    }

    /// Records `stage` as done. When its output changed since the last time
    /// it was done, everything downstream goes back to pending.
    pub fn mark_done(&mut self, stage: Stage) -> Result<()> {
        let digest = self.stage_digest(stage)?;
        let changed = !matches!(self.status(stage),
            StageStatus::Done { digest: d } | StageStatus::Stale { digest: d, .. } if *d == digest);
        if changed {
            for dep in stage.dependents() {
                self.stage_status.insert(dep, StageStatus::Pending);
            }
        }
        self.stage_status.insert(stage, StageStatus::Done { digest });
        Ok(())
    }

    /// Re-records the digest of a done stage without touching dependents,
    /// for changes that keep existing references valid.
    pub fn refresh_digest(&mut self, stage: Stage) -> Result<()> {
        let digest = self.stage_digest(stage)?;
        self.stage_status.insert(stage, StageStatus::Done { digest });
        Ok(())
    }

    pub fn mark_failed(&mut self, stage: Stage, reason: &str) {
        self.stage_status.insert(
            stage,
            StageStatus::Failed {
                reason: reason.to_string(),
            },
        );
    }

    /// Sets `stage` and everything downstream of it back to pending.
    pub fn invalidate(&mut self, stage: Stage) {
        self.stage_status.insert(stage, StageStatus::Pending);
        for dep in stage.dependents() {
            self.stage_status.insert(dep, StageStatus::Pending);
        }
    }

    pub fn selected_images(&self) -> Vec<Option<&ImageAsset>> {
        self.scenes.iter().map(SceneSpec::selected).collect()
    }
}

/// Demotes done stages whose recorded digest or files no longer match and
/// returns the first stage that is not done.
pub fn resume_point(manifest: &mut ProjectManifest, store: &AssetStore) -> Result<Option<Stage>> {
    for stage in Stage::ALL {
        let StageStatus::Done { digest } = manifest.status(stage).clone() else {
            continue;
        };
        let actual = manifest.stage_digest(stage)?;
        let problem = if actual != digest {
            Some("recorded digest does not match the manifest".to_string())
        } else {
            manifest
                .stage_files(stage)
                .into_iter()
                .find(|(path, hash)| !store.verify(path, hash))
                .map(|(path, _)| format!("{path} is missing or altered"))
        };
        if let Some(problem) = problem {
            warn!("stage {stage} needs to run again: {problem}");
            manifest.stage_status.insert(stage, StageStatus::Stale { digest, reason: problem });
        }
    }
    Ok(Stage::ALL.into_iter().find(|s| !manifest.is_done(*s)))
}

/// Exclusive hold on a project directory, released on drop.
#[derive(Debug)]
pub struct ProjectLock {
    path: PathBuf,
}

fn pid_alive(pid: u32) -> bool {
    if !Path::new("/proc/self").exists() {
        return true;
    }
    Path::new(&format!("/proc/{pid}")).exists()
}

impl ProjectLock {
    pub fn acquire(root: &Path) -> Result<Self> {
        let path = root.join(LOCK_FILE);
        let me = std::process::id();
        if let Ok(text) = std::fs::read_to_string(&path) {
            match text.trim().parse::<u32>() {
                Ok(pid) if pid != me && pid_alive(pid) => {
                    return Err(Error::Project(format!(
                        "project {} is locked by process {pid} (remove {} if that process is gone)",
                        root.display(),
                        path.display()
                    )))
                }
                Ok(pid) if pid != me => warn!("removing stale lock held by process {pid}"),
                _ => {}
            }
        }
        write_atomic(&path, format!("{me}\n").as_bytes())?;
        Ok(Self { path })
    }
}

impl Drop for ProjectLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// An open project: root directory, manifest and asset store.
#[derive(Debug)]
pub struct Project {
    root: PathBuf,
    store: AssetStore,
    pub manifest: ProjectManifest,
    _lock: Option<ProjectLock>,
}

fn dir_is_empty(root: &Path) -> Result<bool> {
    if !root.exists() {
        return Ok(true);
    }
    Ok(std::fs::read_dir(root)?.next().is_none())
}

impl Project {
    /// Creates the layout and an all-pending manifest. A non-empty root is
    /// refused unless `force`, in which case only the manifest is replaced
    /// and stored assets are kept.
    pub fn init(root: &Path, request: StoryRequest, config: PipelineConfig, force: bool) -> Result<Project> {
        request.validate()?;
        if !dir_is_empty(root)? && !force {
            return Err(Error::Project(format!(
                "{} is not empty; pass --force to start over",
                root.display()
            )));
        }
        for dir in [ASSETS_DIR, RENDERS_DIR, LOGS_DIR, CACHE_DIR] {
            std::fs::create_dir_all(root.join(dir))?;
        }
        let lock = ProjectLock::acquire(root)?;
        let project = Project {
            root: root.to_path_buf(),
            store: AssetStore::new(root),
            manifest: ProjectManifest::new(request, config),
            _lock: Some(lock),
        };
        project.save()?;
        Ok(project)
    }

    /// Opens an existing project and takes its lock.
    pub fn open(root: &Path) -> Result<Project> {
        let manifest = Self::read_manifest(root)?;
        let lock = ProjectLock::acquire(root)?;
        Ok(Project {
            root: root.to_path_buf(),
            store: AssetStore::new(root),
            manifest,
            _lock: Some(lock),
        })
    }

    pub fn exists(root: &Path) -> bool {
        root.join(MANIFEST_FILE).is_file()
    }

    pub fn read_manifest(root: &Path) -> Result<ProjectManifest> {
        let path = root.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Project(format!("cannot read {}: {e}", path.display())))?;
        ProjectManifest::from_json(&text)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn store(&self) -> &AssetStore {
        &self.store
    }

    pub fn save(&self) -> Result<()> {
        write_atomic(&self.root.join(MANIFEST_FILE), self.manifest.to_json()?.as_bytes())
    }

    pub fn resume_point(&mut self) -> Result<Option<Stage>> {
        resume_point(&mut self.manifest, &self.store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::story::GenrePreset;

    fn request() -> StoryRequest {
        StoryRequest::new("boy", "horse", 42, GenrePreset::Children).unwrap()
    }

    #[test]
    fn fresh_project_starts_at_story() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::init(dir.path(), request(), PipelineConfig::default(), false).unwrap();
        assert!(p.manifest.stage_status.values().all(|s| *s == StageStatus::Pending));
        assert_eq!(p.resume_point().unwrap(), Some(Stage::Story));
        for d in [ASSETS_DIR, RENDERS_DIR, LOGS_DIR] {
            assert!(dir.path().join(d).is_dir());
        }
    }

    #[test]
    fn existing_project_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        drop(Project::init(dir.path(), request(), PipelineConfig::default(), false).unwrap());
        assert!(matches!(
            Project::init(dir.path(), request(), PipelineConfig::default(), false),
            Err(Error::Project(_))
        ));
        assert!(Project::init(dir.path(), request(), PipelineConfig::default(), true).is_ok());
    }

    #[test]
    fn manifest_round_trips_byte_identically() {
        let dir = tempfile::tempdir().unwrap();
        let p = Project::init(dir.path(), request(), PipelineConfig::default(), false).unwrap();
        let on_disk = std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let loaded = ProjectManifest::from_json(&on_disk).unwrap();
        assert_eq!(loaded, p.manifest);
        assert_eq!(loaded.to_json().unwrap(), on_disk);
    }

    #[test]
    fn deleted_speech_demotes_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut p = Project::init(dir.path(), request(), PipelineConfig::default(), false).unwrap();
        let wav = crate::media::Pcm::silence(22050, 2205).encode_wav();
        let audio = p.store().put_audio(&wav).unwrap();
        p.manifest.speech = vec![SpeechSegment {
            sentence_index: 0,
            audio: audio.clone(),
            start: 0.5,
        }];
        p.manifest.total_duration = Some(1.6);
        for st in Stage::ALL {
            p.manifest.stage_status.insert(st, StageStatus::Done { digest: String::new() });
        }
        for st in Stage::ALL {
            let digest = p.manifest.stage_digest(st).unwrap();
            p.manifest.stage_status.insert(st, StageStatus::Done { digest });
        }
        assert_eq!(p.resume_point().unwrap(), None);
        std::fs::remove_file(p.store().abs(&audio.path)).unwrap();
        assert_eq!(p.resume_point().unwrap(), Some(Stage::Speech));
        assert!(p.manifest.is_done(Stage::Music));
    }

    #[test]
    fn dependencies_and_dependents() {
        assert_eq!(Stage::Speech.dependents(), vec![Stage::Music, Stage::Scenes, Stage::Mix, Stage::Render]);
        assert_eq!(
            Stage::Selection.dependents(),
            vec![Stage::Scenes, Stage::Render]
        );
        let m = ProjectManifest::new(request(), PipelineConfig::default());
        assert!(matches!(
            m.require(Stage::Render),
            Err(Error::Dependency {
                stage: Stage::Render,
                missing: Stage::Story
            })
        ));
        assert_eq!(
            ProjectManifest::prerequisites(Stage::Scenes),
            vec![Stage::Story, Stage::Descriptions, Stage::Candidates, Stage::Selection, Stage::Speech]
        );
        assert!(m.require(Stage::Story).is_ok());
    }

    #[test]
    fn changed_output_invalidates_downstream() {
        let mut m = ProjectManifest::new(request(), PipelineConfig::default());
        for st in Stage::ALL {
            m.mark_done(st).unwrap();
        }
        m.mark_done(Stage::Story).unwrap();
        assert!(m.is_done(Stage::Render));
        m.story = Some(Story::from_completion("p", "A boy. A horse.").unwrap());
        m.mark_done(Stage::Story).unwrap();
        assert!(!m.is_done(Stage::Descriptions));
        assert!(!m.is_done(Stage::Render));
        assert!(m.is_done(Stage::Story));
    }

    #[test]
    fn live_lock_blocks_second_writer() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join(LOCK_FILE), "1\n").unwrap();
        assert!(ProjectLock::acquire(dir.path()).is_err());
        std::fs::write(dir.path().join(LOCK_FILE), "999999999\n").unwrap();
        let lock = ProjectLock::acquire(dir.path()).unwrap();
        drop(lock);
        assert!(!dir.path().join(LOCK_FILE).exists());
    }
}
