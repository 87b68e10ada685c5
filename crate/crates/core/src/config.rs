//! Pipeline configuration: defaults, TOML file, command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::compose::{ComposeMode, ComposeOptions, EncodeSettings, DEFAULT_FPS};
use crate::error::{Error, Result};
use crate::gateway::{BackendEndpoint, BackendKind, IMAGE_SIZES};
use crate::story::StyleConfig;
use crate::timeline::MixConfig;

pub const DEFAULT_CURATED_CANDIDATES: usize = 100;
pub const DEFAULT_AUTOMATED_CANDIDATES: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum BackendMode {
    #[default]
    Mock,
    Live,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextConfig {
    pub story_max_tokens: u32,
    pub description_max_tokens: u32,
}

impl Default for TextConfig {
    fn default() -> Self {
        Self {
            story_max_tokens: 1024,
            description_max_tokens: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageConfig {
    pub width: u32,
    pub height: u32,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self { width: 512, height: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpeechConfig {
    pub voice: String,
    /// Duration multiplier: 2.1 makes narration 2.1 times as long.
    pub length_scale: f64,
    /// Synthesize the whole story in one call and split it by sentence length.
    pub whole_story: bool,
}

impl Default for SpeechConfig {
    fn default() -> Self {
        Self {
            voice: "en_US/vctk_low".into(),
            length_scale: 2.1,
            whole_story: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MusicConfig {
    /// Artist tag such as `raffi`, or `unconditional`.
    pub preset: String,
    pub duration: f64,
    /// Keep only the instruments stem of the generated track.
    pub separate_vocals: bool,
}

impl Default for MusicConfig {
    fn default() -> Self {
        Self {
            preset: "raffi".into(),
            duration: 60.0,
            separate_vocals: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComposeConfig {
    pub mode: ComposeMode,
    pub fallback: bool,
    pub encode: EncodeSettings,
}

impl Default for ComposeConfig {
    fn default() -> Self {
        Self {
            mode: ComposeMode::Native2d,
            fallback: true,
            encode: EncodeSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub backends: BackendMode,
    pub seed: u64,
    pub parallelism: usize,
    pub fps: u32,
    /// Candidates per scene; unset means 1 for `auto` and 100 for `candidates`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub candidates: Option<usize>,
    pub ffmpeg: String,
    /// Write the ducking envelope as CSV next to the mix.
    pub envelope_csv: bool,
    pub text: TextConfig,
    pub image: ImageConfig,
    pub style: StyleConfig,
    pub speech: SpeechConfig,
    pub music: MusicConfig,
    pub compose: ComposeConfig,
    pub mix: MixConfig,
    /// Live backends, one per kind.
    pub endpoints: Vec<BackendEndpoint>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            backends: BackendMode::Mock,
            seed: 0,
            parallelism: 4,
            fps: DEFAULT_FPS,
            candidates: None,
            ffmpeg: "ffmpeg".into(),
            envelope_csv: false,
            text: TextConfig::default(),
            image: ImageConfig::default(),
            style: StyleConfig::default(),
            speech: SpeechConfig::default(),
            music: MusicConfig::default(),
            compose: ComposeConfig::default(),
            mix: MixConfig::default(),
            endpoints: Vec::new(),
        }
    }
}

/// Values given on the command line; `None` leaves the file or default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub backends: Option<BackendMode>,
    pub seed: Option<u64>,
    pub parallelism: Option<usize>,
    pub fps: Option<u32>,
    pub candidates: Option<usize>,
    pub music_preset: Option<String>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    /// Defaults, then the file at `path` if given, then `overrides`.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.backends {
            self.backends = v;
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.parallelism {
            self.parallelism = v;
        }
        if let Some(v) = o.fps {
            self.fps = v;
        }
        if let Some(v) = o.candidates {
            self.candidates = Some(v);
        }
        if let Some(v) = &o.music_preset {
            self.music.preset = v.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if !(10..=60).contains(&self.fps) {
            return Err(Error::Config(format!("fps {} outside [10, 60]", self.fps)));
        }
        if self.candidates == Some(0) {
            return Err(Error::Config("candidates must be at least 1".into()));
        }
        for v in [self.image.width, self.image.height] {
            if !IMAGE_SIZES.contains(&v) {
                return Err(Error::Config(format!("image size {v} not one of {IMAGE_SIZES:?}")));
            }
        }
        if !(0.5..=3.0).contains(&self.speech.length_scale) {
            return Err(Error::Config(format!(
                "length_scale {} outside [0.5, 3.0]",
                self.speech.length_scale
            )));
        }
        if !(10.0..=600.0).contains(&self.music.duration) {
            return Err(Error::Config(format!("music duration {} outside [10, 600]", self.music.duration)));
        }
        let e = &self.compose.encode;
        if e.width % 2 != 0 || e.height % 2 != 0 || e.width == 0 || e.height == 0 {
            return Err(Error::Config(format!("output size {}x{} must be even", e.width, e.height)));
        }
        self.mix.validate()?;
        let mut seen = std::collections::BTreeSet::new();
        for ep in &self.endpoints {
            ep.validate()?;
            if !seen.insert(ep.kind) {
                return Err(Error::Config(format!("more than one {} endpoint configured", ep.kind)));
            }
        }
        Ok(())
    }

    pub fn candidates_or(&self, default: usize) -> usize {
        self.candidates.unwrap_or(default)
    }

    fn required_kinds(&self) -> Vec<BackendKind> {
        let mut kinds = vec![BackendKind::Text, BackendKind::Image, BackendKind::Tts, BackendKind::Music];
        if self.music.separate_vocals {
            kinds.push(BackendKind::VocalSeparation);
        }
        kinds
    }

    /// The endpoints the gateway should be built from.
    pub fn resolved_endpoints(&self) -> Result<Vec<BackendEndpoint>> {
        match self.backends {
            BackendMode::Mock => {
                let mut kinds = self.required_kinds();
                if self.compose.mode == ComposeMode::DepthBackend {
                    kinds.push(BackendKind::DepthEffect);
                }
                Ok(kinds.into_iter().map(BackendEndpoint::mock).collect())
            }
            BackendMode::Live => {
                for kind in self.required_kinds() {
                    if !self.endpoints.iter().any(|e| e.kind == kind) {
                        return Err(Error::Config(format!(
                            "live backends selected but no {kind} endpoint is configured"
                        )));
                    }
                }
                Ok(self.endpoints.clone())
            }
        }
    }

    pub fn compose_options(&self) -> ComposeOptions {
        ComposeOptions {
            mode: self.compose.mode,
            fallback: self.compose.fallback,
            encode: self.compose.encode.clone(),
            ffmpeg: self.ffmpeg.clone(),
        }
    }
}
