//! Samples a Ken Burns path and prints the crop rectangle at each step.

use storyreel::camera::{crop_rect, default_camera_path, interpolate_camera, CameraKeyframe, CameraPath, Easing};

fn main() -> storyreel::Result<()> {
    let (w, h) = (512, 512);
    let path = default_camera_path(1);
    println!("default path for scene 1: {:?}", path.easing);
    for i in 0..=10 {
        let t = i as f64 / 10.0;
        let kf = interpolate_camera(&path, t)?;
        let r = crop_rect(w, h, &kf);
        println!("t={t:.1} zoom={:.3} crop={}x{}+{}+{}", kf.zoom, r.w, r.h, r.x, r.y);
    }

    // a pan from the left edge to the right edge at constant zoom
    let pan = CameraPath::new(
        vec![
            CameraKeyframe { t: 0.0, zoom: 2.0, center_x: 0.0, center_y: 0.5, rotation: 0.0 },
            CameraKeyframe { t: 1.0, zoom: 2.0, center_x: 1.0, center_y: 0.5, rotation: 0.0 },
        ],
        Easing::Linear,
    )?;
    for t in [0.0, 0.5, 1.0] {
        let r = crop_rect(w, h, &interpolate_camera(&pan, t)?);
        println!("pan t={t}: x={} (stays inside: {})", r.x, r.within(w, h));
    }
    Ok(())
}
