//! Generates a mock image and animates it into a clip with ffmpeg.
//!
//! `cargo run --example compose_scene -- [workdir]`

use storyreel::assets::AssetStore;
use storyreel::camera::default_camera_path;
use storyreel::compose::{compose_scene, ComposeOptions};
use storyreel::gateway::{BackendEndpoint, BackendKind, Gateway};

fn main() -> storyreel::Result<()> {
    let dir = std::env::args().nth(1).map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("storyreel-compose"));
    std::fs::create_dir_all(&dir)?;
    let gateway = Gateway::from_endpoints(AssetStore::new(&dir), &[BackendEndpoint::mock(BackendKind::Image)], "ffmpeg")?;
    let image = gateway.generate_image("a boy riding a horse at sunset", 1, 512, 512)?;
    let scene = compose_scene(&gateway, &image, &default_camera_path(0), 4.0, 25, &ComposeOptions::default())?;
    println!("image  {}", gateway.store().abs(&image.path).display());
    println!("clip   {} ({} frames, {:?})", gateway.store().abs(&scene.video.path).display(), scene.video.frames, scene.mode);
    for cmd in &scene.commands {
        println!("$ {cmd}");
    }
    Ok(())
}
