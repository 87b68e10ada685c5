//! Stops a run after the speech stage, reopens the project and resumes.

use storyreel::config::PipelineConfig;
use storyreel::store::Stage;
use storyreel::story::{GenrePreset, StoryRequest};
use storyreel::Pipeline;

fn main() -> storyreel::Result<()> {
    let dir = tempfile::tempdir()?;
    let req = StoryRequest::new("girl", "dragon", 3, GenrePreset::Children)?;
    let mut p = Pipeline::create(dir.path(), req, PipelineConfig::default(), false)?;
    p.run_auto(Some(Stage::Speech))?;
    drop(p); // releases the project lock, as a dead process would

    let mut p = Pipeline::open(dir.path(), None)?;
    let report = p.run_auto(None)?;
    println!("resumed at {:?}, ran {:?}", report.resumed_from, report.stages_run);
    println!("backend calls after resume: {:?}", report.stats.iter().map(|(k, s)| (k.to_string(), s.calls)).collect::<Vec<_>>());
    Ok(())
}
