//! Candidate generation and selection, for curated and automated runs.

use serde::{Deserialize, Serialize};

use crate::assets::ImageAsset;
use crate::error::{Error, Result};
use crate::gateway::Gateway;
use crate::hashing::seed_from;
use crate::parallel::par_map;
use crate::store::{CandidateFailure, ProjectManifest, SceneSpec, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    /// Select candidate 0 wherever nothing is selected yet.
    First,
    /// Leave selection to a person.
    None,
}

/// First candidate seed of a scene; candidate `k` uses `base + k`.
pub fn candidate_seed_base(request_seed: u64, scene_index: usize) -> u64 {
    seed_from(&[b"candidates", &request_seed.to_le_bytes(), &(scene_index as u64).to_le_bytes()]) >> 1
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub added: usize,
    pub failures: Vec<CandidateFailure>,
}

fn scene_prompt(scene: &SceneSpec) -> Result<&str> {
    scene
        .description
        .as_ref()
        .map(|d| d.augmented_prompt.as_str())
        .ok_or_else(|| Error::Contract(format!("scene {} has no description yet", scene.sentence_index)))
}

/// Generates candidates so that every scene has attempted at least `n` seeds,
/// appending to what is already there. Each scene needs at least one
/// successful candidate.
pub fn generate_candidates(
    manifest: &mut ProjectManifest,
    gateway: &Gateway,
    n: usize,
    parallelism: usize,
) -> Result<Vec<BatchOutcome>> {
    let jobs: Vec<(usize, u64)> = manifest
        .scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (s.seeds_used..(n as u64).max(s.seeds_used)).map(move |k| (i, k)))
        .collect();
    let outcomes = run_jobs(manifest, gateway, &jobs, parallelism)?;
    for (i, scene) in manifest.scenes.iter().enumerate() {
        if scene.candidates.is_empty() {
            return Err(Error::Contract(format!(
                "scene {i}: every candidate failed ({} failures)",
                scene.failures.len()
            )));
        }
    }
    Ok(outcomes)
}

/// Appends `count` more candidates to one scene. Existing candidates and the
/// current selection are left untouched.
pub fn regenerate(
    manifest: &mut ProjectManifest,
    gateway: &Gateway,
    scene_index: usize,
    count: usize,
    parallelism: usize,
) -> Result<BatchOutcome> {
    let scene = manifest
        .scenes
        .get(scene_index)
        .ok_or_else(|| Error::InvalidSelection(format!("no scene {scene_index}")))?;
    if count == 0 {
        return Err(Error::InvalidRequest("regenerate needs a count of at least 1".into()));
    }
    let start = scene.seeds_used;
    let jobs: Vec<(usize, u64)> = (start..start + count as u64).map(|k| (scene_index, k)).collect();
    let mut outcomes = run_jobs(manifest, gateway, &jobs, parallelism)?;
    if manifest.is_done(Stage::Candidates) {
        manifest.refresh_digest(Stage::Candidates)?;
    }
    Ok(outcomes.swap_remove(scene_index))
}

fn run_jobs(
    manifest: &mut ProjectManifest,
    gateway: &Gateway,
    jobs: &[(usize, u64)],
    parallelism: usize,
) -> Result<Vec<BatchOutcome>> {
    let seed = manifest.request.seed;
    let (w, h) = (manifest.config.image.width, manifest.config.image.height);
    let prompts = manifest
        .scenes
        .iter()
        .map(|s| scene_prompt(s).map(str::to_string))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<(u64, Result<ImageAsset>)> = par_map(jobs, parallelism, |_, &(scene, k)| {
        let s = candidate_seed_base(seed, scene).wrapping_add(k);
        (s, gateway.generate_image(&prompts[scene], s, w, h))
    });
    let mut outcomes = vec![BatchOutcome::default(); manifest.scenes.len()];
    for (&(scene_index, k), (s, result)) in jobs.iter().zip(results) {
        let scene = &mut manifest.scenes[scene_index];
        scene.seeds_used = scene.seeds_used.max(k + 1);
        match result {
            Ok(image) => {
                scene.candidates.push(image);
                scene.candidate_seeds.push(s);
                outcomes[scene_index].added += 1;
            }
            Err(e) => {
                log::warn!("scene {scene_index} candidate seed {s} failed: {e}");
                let failure = CandidateFailure {
                    seed: s,
                    error: e.to_string(),
                };
                scene.failures.push(failure.clone());
                outcomes[scene_index].failures.push(failure);
            }
        }
    }
    Ok(outcomes)
}

/// Sets a scene's selection. Returns false when it was already selected.
/// A changed selection drops that scene's rendered clip only.
pub fn select_candidate(manifest: &mut ProjectManifest, scene_index: usize, candidate_index: usize) -> Result<bool> {
    let scene = manifest
        .scenes
        .get_mut(scene_index)
        .ok_or_else(|| Error::InvalidSelection(format!("no scene {scene_index}")))?;
    if candidate_index >= scene.candidates.len() {
        return Err(Error::InvalidSelection(format!(
            "scene {scene_index} has {} candidates, cannot select {candidate_index}",
            scene.candidates.len()
        )));
    }
    if scene.selected_index == Some(candidate_index) {
        return Ok(false);
    }
    scene.selected_index = Some(candidate_index);
    scene.rendered = None;
    sync_selection_stage(manifest)?;
    Ok(true)
}

/// Applies `policy` and marks the selection stage done once every scene has
/// a selection.
pub fn auto_select(manifest: &mut ProjectManifest, policy: SelectionPolicy) -> Result<()> {
    if let Some(scene) = manifest.scenes.iter().find(|s| s.candidates.is_empty()) {
        return Err(Error::Contract(format!("scene {} has no candidates", scene.sentence_index)));
    }
    if policy == SelectionPolicy::First {
        for scene in &mut manifest.scenes {
            if scene.selected_index.is_none() {
                scene.selected_index = Some(0);
                scene.rendered = None;
            }
        }
    }
    sync_selection_stage(manifest)
}

pub fn all_selected(manifest: &ProjectManifest) -> bool {
    !manifest.scenes.is_empty() && manifest.scenes.iter().all(|s| s.selected_index.is_some())
}

fn sync_selection_stage(manifest: &mut ProjectManifest) -> Result<()> {
    if all_selected(manifest) && manifest.is_done(Stage::Candidates) {
        manifest.mark_done(Stage::Selection)
    } else {
        manifest.invalidate(Stage::Selection);
        Ok(())
    }
}
