//! Runs every stage with the mock backends, then runs again to show the
//! second pass is served entirely from disk.
//!
//! `cargo run --example mock_pipeline -- [project-dir]`

use storyreel::config::PipelineConfig;
use storyreel::story::{GenrePreset, StoryRequest};
use storyreel::Pipeline;

fn main() -> storyreel::Result<()> {
    let root = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("storyreel-mock"));
    let req = StoryRequest::new("boy", "horse", 42, GenrePreset::Children)?;
    let mut p = Pipeline::open_or_create(&root, req, PipelineConfig::default(), true)?;
    let first = p.run_auto(None)?;
    println!("ran {:?}", first.stages_run);
    for (kind, stats) in &first.stats {
        println!("  {kind:<16} calls={} cache hits={}", stats.calls, stats.cache_hits);
    }
    let second = p.run_auto(None)?;
    println!("second run: {} backend calls, stages {:?}", second.backend_calls, second.stages_run);
    println!("video: {}", p.final_video_path().map(|v| v.display().to_string()).unwrap_or_default());
    Ok(())
}
