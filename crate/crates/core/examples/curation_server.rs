//! Curated mode driven through the HTTP API: generate candidates, pick one
//! per scene with a scripted client, then render.
//!
//! With `--interactive` the server stays up until Ctrl-C instead.

use serde_json::{json, Value};
use storyreel::config::PipelineConfig;
use storyreel::server::CurationServer;
use storyreel::store::Stage;
use storyreel::story::{GenrePreset, StoryRequest};
use storyreel::{Pipeline, RunMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let interactive = std::env::args().any(|a| a == "--interactive");
    let dir = tempfile::tempdir()?;
    let cfg = PipelineConfig {
        candidates: Some(4),
        ..PipelineConfig::default()
    };
    let mut p = Pipeline::create(dir.path(), StoryRequest::new("boy", "horse", 42, GenrePreset::Children)?, cfg, false)?;
    for stage in [Stage::Story, Stage::Descriptions, Stage::Candidates] {
        p.run_stage(stage, RunMode::Curated, false)?;
    }
    let (project, gateway) = p.into_parts();
    let server = CurationServer::start(project, gateway, 0)?;
    let base = server.url();
    println!("curation API at {base}/api/scenes");
    if interactive {
        server.wait()?;
        return Ok(());
    }

    let client = reqwest::blocking::Client::builder().no_proxy().build()?;
    let scenes: Value = client.get(format!("{base}/api/scenes")).send()?.json()?;
    for scene in scenes.as_array().into_iter().flatten() {
        let i = scene["scene_index"].as_u64().unwrap_or(0);
        let pick = i % 4;
        let r: Value = client.post(format!("{base}/api/scenes/{i}/selection")).json(&json!({ "index": pick })).send()?.json()?;
        println!("scene {i}: picked {pick} -> {}", r["selected_index"]);
    }
    let (project, gateway) = server.stop()?;
    let mut p = Pipeline::from_parts(project, gateway);
    p.run_auto(None)?;
    println!("rendered {}", p.final_video_path().unwrap().display());
    Ok(())
}
