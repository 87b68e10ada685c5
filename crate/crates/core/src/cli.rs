//! Command-line front end. `main` only calls [`run`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{BackendMode, Overrides, PipelineConfig};
use crate::curation::SelectionPolicy;
use crate::error::{Error, Result};
use crate::pipeline::{build_gateway, Pipeline, RunMode, RunReport};
use crate::server::CurationServer;
use crate::store::{Project, Stage};
use crate::story::{GenrePreset, StoryRequest};

/// Environment variable naming a stage after which the process aborts.
/// Used to exercise crash recovery.
pub const FAULT_ENV: &str = "STORYREEL_FAULT_AFTER";

#[derive(Debug, Parser)]
#[command(name = "storyreel", version, about = "Narrated story videos from generative backends")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Project directory.
    #[arg(long, global = true, default_value = "storyreel-project")]
    pub project: PathBuf,
    /// TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub backends: Option<BackendMode>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[arg(long, global = true)]
    pub fps: Option<u32>,
    /// Image candidates per scene.
    #[arg(long, global = true)]
    pub candidates: Option<usize>,
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Args)]
pub struct RequestArgs {
    #[arg(long)]
    pub x: String,
    #[arg(long)]
    pub y: String,
    /// `children` or `custom:<prefix>`.
    #[arg(long, default_value = "children")]
    pub genre: String,
    /// Replace an existing project.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct StageArgs {
    /// Run the stage even if it is already done.
    #[arg(long)]
    pub redo: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every stage, picking the first candidate for each scene.
    Auto {
        #[command(flatten)]
        request: RequestArgs,
        #[arg(long)]
        music_preset: Option<String>,
        /// Stop once this stage is done.
        #[arg(long)]
        stop_after: Option<String>,
    },
    /// Create a project without running anything.
    New {
        #[command(flatten)]
        request: RequestArgs,
    },
    /// Generate the story text and split it into sentences.
    Story(StageArgs),
    /// Write one picture description per sentence.
    Describe(StageArgs),
    /// Generate image candidates for every scene.
    Candidates(StageArgs),
    /// Select candidates, one scene at a time or by policy.
    Select {
        #[arg(long, requires = "index")]
        scene: Option<usize>,
        #[arg(long, requires = "scene")]
        index: Option<usize>,
        #[arg(long, value_enum, conflicts_with = "scene")]
        policy: Option<SelectionPolicy>,
    },
    /// Narrate each sentence.
    Speech(StageArgs),
    /// Generate background music and fit it to the narration.
    Music {
        #[arg(long)]
        preset: Option<String>,
        #[command(flatten)]
        stage: StageArgs,
    },
    /// Animate each selected image into a clip.
    Scenes(StageArgs),
    /// Mix narration over ducked music.
    Mix(StageArgs),
    /// Join the clips, add the mix and write subtitles.
    Render(StageArgs),
    /// Serve the curation API until interrupted.
    Serve {
        #[arg(long, default_value_t = 8765)]
        port: u16,
    },
    /// Print stage progress.
    Status,
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            backends: self.backends,
            seed: self.seed,
            parallelism: self.parallelism,
            fps: self.fps,
            candidates: self.candidates,
            music_preset: None,
        }
    }
}

fn fault_hook() -> Option<Stage> {
    std::env::var(FAULT_ENV).ok().and_then(|s| Stage::parse(&s).ok())
}

fn install_fault_hook(pipeline: &mut Pipeline) {
    if let Some(target) = fault_hook() {
        pipeline.set_after_commit(move |stage| {
            if stage == target {
                eprintln!("aborting after stage {stage} ({FAULT_ENV})");
                std::process::abort();
            }
        });
    }
}

/// Config for a new project: defaults, file, flags.
fn fresh_config(global: &GlobalArgs, music_preset: Option<&String>) -> Result<PipelineConfig> {
    let mut overrides = global.overrides();
    overrides.music_preset = music_preset.cloned();
    PipelineConfig::load(global.config.as_deref(), &overrides)
}

/// Config for an existing project: the recorded one (or the file, when
/// given), then flags.
fn reopened_config(global: &GlobalArgs, recorded: &PipelineConfig, music_preset: Option<&String>) -> Result<PipelineConfig> {
    let mut cfg = match &global.config {
        Some(_) => fresh_config(global, music_preset)?,
        None => recorded.clone(),
    };
    let mut overrides = global.overrides();
    overrides.music_preset = music_preset.cloned();
    cfg.apply(&overrides);
    cfg.validate()?;
    Ok(cfg)
}

fn request(args: &RequestArgs, seed: u64) -> Result<StoryRequest> {
    StoryRequest::new(&args.x, &args.y, seed, GenrePreset::parse(&args.genre)?)
}

fn open(global: &GlobalArgs) -> Result<Pipeline> {
    let recorded = Project::read_manifest(&global.project)?;
    let cfg = reopened_config(global, &recorded.config, None)?;
    let mut pipeline = Pipeline::open(&global.project, Some(cfg))?;
    install_fault_hook(&mut pipeline);
    Ok(pipeline)
}

fn summarize(report: &RunReport) {
    let stages: Vec<&str> = report.stages_run.iter().map(|s| s.as_str()).collect();
    match report.resumed_from {
        Some(stage) => eprintln!("resumed at stage {stage}; ran: {}", stages.join(", ")),
        None => eprintln!("all stages already done"),
    }
    for (kind, stats) in &report.stats {
        eprintln!(
            "  {kind}: {} call(s), {} cache hit(s), {} attempt(s), {} failure(s)",
            stats.calls, stats.cache_hits, stats.attempts, stats.failures
        );
    }
    eprintln!("backend calls: {}", report.backend_calls);
}

fn run_stage(global: &GlobalArgs, stage: Stage, args: &StageArgs, mode: RunMode) -> Result<()> {
    let mut p = open(global)?;
    p.gateway.reset_stats();
    let ran = p.run_stage(stage, mode, args.redo)?;
    if !ran {
        eprintln!("stage {stage} already done (use --redo to run it again)");
    }
    let report = p.report(Some(stage), if ran { vec![stage] } else { vec![] });
    p.write_report(&report)?;
    eprintln!("backend calls: {}", report.backend_calls);
    if stage == Stage::Render {
        if let Some(path) = p.final_video_path() {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn print_status(root: &Path) -> Result<()> {
    let m = Project::read_manifest(root)?;
    for stage in Stage::ALL {
        println!("{:<13}{}", stage.as_str(), serde_json::to_string(m.status(stage))?);
    }
    let selected = m.scenes.iter().filter(|s| s.selected_index.is_some()).count();
    println!("scenes selected: {selected}/{}", m.scenes.len());
    Ok(())
}

/// Executes a parsed command line.
pub fn execute(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Auto {
            request: args,
            music_preset,
            stop_after,
        } => {
            let stop_after = stop_after.as_deref().map(Stage::parse).transpose()?;
            let mut pipeline = if Project::exists(&g.project) && !args.force {
                let recorded = Project::read_manifest(&g.project)?;
                let cfg = reopened_config(g, &recorded.config, music_preset.as_ref())?;
                let req = request(args, cfg.seed)?;
                if req != recorded.request {
                    return Err(Error::Project(format!(
                        "{} holds a project for a different request; pass --force to replace it",
                        g.project.display()
                    )));
                }
                Pipeline::open(&g.project, Some(cfg))?
            } else {
                let cfg = fresh_config(g, music_preset.as_ref())?;
                let req = request(args, cfg.seed)?;
                Pipeline::create(&g.project, req, cfg, args.force)?
            };
            install_fault_hook(&mut pipeline);
            let report = pipeline.run_auto(stop_after)?;
            summarize(&report);
            if let Some(path) = pipeline.final_video_path() {
                println!("{}", path.display());
            }
            Ok(())
        }
        Command::New { request: args } => {
            let cfg = fresh_config(g, None)?;
            let req = request(args, cfg.seed)?;
            let p = Pipeline::create(&g.project, req, cfg, args.force)?;
            println!("{}", p.project.root().display());
            Ok(())
        }
        Command::Story(a) => run_stage(g, Stage::Story, a, RunMode::Automated),
        Command::Describe(a) => run_stage(g, Stage::Descriptions, a, RunMode::Automated),
        Command::Candidates(a) => run_stage(g, Stage::Candidates, a, RunMode::Curated),
        Command::Select { scene, index, policy } => {
            let mut p = open(g)?;
            match (scene, index, policy) {
                (Some(s), Some(i), None) => {
                    let changed = p.select_one(*s, *i)?;
                    eprintln!("scene {s}: candidate {i} {}", if changed { "selected" } else { "already selected" });
                }
                (None, None, Some(policy)) => p.select(*policy)?,
                _ => return Err(Error::Config("give --scene and --index, or --policy".into())),
            }
            let m = &p.project.manifest;
            let selected = m.scenes.iter().filter(|s| s.selected_index.is_some()).count();
            eprintln!("scenes selected: {selected}/{}", m.scenes.len());
            Ok(())
        }
        Command::Speech(a) => run_stage(g, Stage::Speech, a, RunMode::Automated),
        Command::Music { preset, stage } => {
            if preset.is_none() {
                return run_stage(g, Stage::Music, stage, RunMode::Automated);
            }
            let mut p = open(g)?;
            if p.project.manifest.is_done(Stage::Music) && !stage.redo && preset.as_deref() == Some(&p.config().music.preset) {
                eprintln!("stage music already done (use --redo to run it again)");
                return Ok(());
            }
            p.project.manifest.config.music.preset = preset.clone().unwrap_or_default();
            p.run_music(preset.as_deref())?;
            Ok(())
        }
        Command::Scenes(a) => run_stage(g, Stage::Scenes, a, RunMode::Automated),
        Command::Mix(a) => run_stage(g, Stage::Mix, a, RunMode::Automated),
        Command::Render(a) => run_stage(g, Stage::Render, a, RunMode::Automated),
        Command::Serve { port } => {
            let recorded = Project::read_manifest(&g.project)?;
            let cfg = reopened_config(g, &recorded.config, None)?;
            let mut project = Project::open(&g.project)?;
            project.manifest.config = cfg;
            let gateway = build_gateway(project.root(), &project.manifest.config)?;
            let server = CurationServer::start(project, gateway, *port)?;
            println!("{}", server.url());
            server.wait()
        }
        Command::Status => print_status(&g.project),
    }
}

/// Parses arguments, runs, reports errors on stderr. Returns the exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                if !msg.contains(&s.to_string()) {
                    msg.push_str(&format!("\n  caused by: {s}"));
                }
                source = s.source();
            }
            eprintln!("{msg}");
            e.exit_code()
        }
    }
}
