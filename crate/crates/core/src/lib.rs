//! Turns a two-subject prompt into a narrated, scored story video by
//! chaining text, image, speech and music backends.
//!
//! The pipeline runs in resumable stages recorded in a project manifest.
//! Every backend call goes through a content-addressed cache, so re-running
//! a finished project makes no backend calls.

pub mod assets;
pub mod camera;
pub mod cli;
pub mod compose;
pub mod config;
pub mod curation;
pub mod error;
pub mod gateway;
pub mod hashing;
pub mod media;
pub mod parallel;
pub mod pipeline;
pub mod render;
pub mod server;
pub mod store;
pub mod story;
pub mod timeline;
pub mod tool;

pub use error::{Error, Result};
pub use pipeline::{Pipeline, RunMode, RunReport};
