//! Ken Burns camera math: keyframes, easing and crop geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_ZOOM: f64 = 1.0;
pub const MAX_ZOOM: f64 = 4.0;
/// Zoom reached by the default zoom-in / zoom-out paths.
pub const DEFAULT_ZOOM_PEAK: f64 = 1.25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraKeyframe {
    /// Fraction of the scene duration.
    pub t: f64,
    pub zoom: f64,
    /// Fractions of image width / height.
    pub center_x: f64,
    pub center_y: f64,
    /// Degrees, clockwise.
    pub rotation: f64,
}

impl CameraKeyframe {
    pub fn centered(t: f64, zoom: f64) -> Self {
        Self {
            t,
            zoom,
            center_x: 0.5,
            center_y: 0.5,
            rotation: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [self.t, self.zoom, self.center_x, self.center_y, self.rotation];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("non-finite keyframe {self:?}")));
        }
        if !(0.0..=1.0).contains(&self.t) {
            return Err(Error::Contract(format!("keyframe t {} outside [0, 1]", self.t)));
        }
        if !(MIN_ZOOM..=MAX_ZOOM).contains(&self.zoom) {
            return Err(Error::Contract(format!(
                "keyframe zoom {} outside [{MIN_ZOOM}, {MAX_ZOOM}]",
                self.zoom
            )));
        }
        if !(0.0..=1.0).contains(&self.center_x) || !(0.0..=1.0).contains(&self.center_y) {
            return Err(Error::Contract(format!(
                "keyframe center ({}, {}) outside the unit square",
                self.center_x, self.center_y
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Easing {
    #[default]
    Linear,
    Smoothstep,
}

impl Easing {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Easing::Linear => u,
            Easing::Smoothstep => u * u * (3.0 - 2.0 * u),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub keyframes: Vec<CameraKeyframe>,
    pub easing: Easing,
}

impl CameraPath {
    pub fn new(keyframes: Vec<CameraKeyframe>, easing: Easing) -> Result<Self> {
        let path = Self { keyframes, easing };
        path.validate()?;
        Ok(path)
    }

    /// At least two keyframes, strictly increasing `t` from 0 to 1.
    pub fn validate(&self) -> Result<()> {
        let kfs = &self.keyframes;
        if kfs.len() < 2 {
            return Err(Error::Contract("camera path needs at least two keyframes".into()));
        }
        for kf in kfs {
            kf.validate()?;
        }
        if kfs[0].t != 0.0 || kfs[kfs.len() - 1].t != 1.0 {
            return Err(Error::Contract("camera path must start at t=0 and end at t=1".into()));
        }
        if kfs.windows(2).any(|w| w[0].t >= w[1].t) {
            return Err(Error::Contract("camera keyframe times must strictly increase".into()));
        }
        Ok(())
    }

    /// A path that holds one framing for the whole scene.
    pub fn still(zoom: f64, center_x: f64, center_y: f64) -> Result<Self> {
        let kf = |t| CameraKeyframe {
            t,
            zoom,
            center_x,
            center_y,
            rotation: 0.0,
        };
        Self::new(vec![kf(0.0), kf(1.0)], Easing::Linear)
    }

    pub fn has_rotation(&self) -> bool {
        self.keyframes.iter().any(|k| k.rotation != 0.0)
    }
}

/// Zoom-in for even scenes, zoom-out for odd ones, centred, no rotation.
pub fn default_camera_path(scene_index: usize) -> CameraPath {
    default_camera_path_with_peak(scene_index, DEFAULT_ZOOM_PEAK)
}

pub fn default_camera_path_with_peak(scene_index: usize, peak: f64) -> CameraPath {
    let (from, to) = if scene_index % 2 == 0 { (1.0, peak) } else { (peak, 1.0) };
    CameraPath {
        keyframes: vec![CameraKeyframe::centered(0.0, from), CameraKeyframe::centered(1.0, to)],
        easing: Easing::Linear,
    }
}

/// Monotone interpolation between `a` and `b` that returns `b` exactly at `e == 1`.
fn mix(a: f64, b: f64, e: f64) -> f64 {
    if e >= 1.0 {
        return b;
    }
    let v = a + (b - a) * e;
    v.clamp(a.min(b), a.max(b))
}

pub fn interpolate_camera(path: &CameraPath, t: f64) -> Result<CameraKeyframe> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Contract(format!("camera time {t} outside [0, 1]")));
    }
    let kfs = &path.keyframes;
    let seg = kfs
        .windows(2)
        .position(|w| t <= w[1].t)
        .unwrap_or(kfs.len().saturating_sub(2));
    let (a, b) = (&kfs[seg], &kfs[seg + 1]);
    if t == a.t {
        return Ok(*a);
    }
    if t == b.t {
        return Ok(*b);
    }
    let u = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
    let e = path.easing.apply(u);
    Ok(CameraKeyframe {
        t,
        zoom: mix(a.zoom, b.zoom, e),
        center_x: mix(a.center_x, b.center_x, e),
        center_y: mix(a.center_y, b.center_y, e),
        rotation: mix(a.rotation, b.rotation, e),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl CropRect {
    pub fn within(&self, image_w: u32, image_h: u32) -> bool {
        self.w > 0 && self.h > 0 && self.x + self.w <= image_w && self.y + self.h <= image_h
    }
}

fn even_extent(raw: f64, limit: u32) -> u32 {
    let max_even = (limit - limit % 2).max(2);
    (((raw / 2.0).round() * 2.0) as u32).clamp(2, max_even).min(limit)
}

fn even_offset(center: f64, extent: u32, limit: u32) -> u32 {
    let max = (limit - extent) as f64;
    let raw = (center - extent as f64 / 2.0).clamp(0.0, max);
    ((raw / 2.0).floor() * 2.0) as u32
}

/// Source rectangle for one keyframe: `image / zoom` in size, centred on the
/// keyframe centre, shifted to stay inside the image, snapped to even pixels.
pub fn crop_rect(image_w: u32, image_h: u32, kf: &CameraKeyframe) -> CropRect {
    let zoom = kf.zoom.clamp(MIN_ZOOM, MAX_ZOOM);
    let w = even_extent(image_w as f64 / zoom, image_w);
    let h = even_extent(image_h as f64 / zoom, image_h);
    CropRect {
        x: even_offset(kf.center_x.clamp(0.0, 1.0) * image_w as f64, w, image_w),
        y: even_offset(kf.center_y.clamp(0.0, 1.0) * image_h as f64, h, image_h),
        w,
        h,
    }
}

/// Per-frame crop and rotation for a clip of `frames` frames.
pub fn frame_plan(path: &CameraPath, image_w: u32, image_h: u32, frames: u64) -> Result<Vec<(CropRect, f64)>> {
    path.validate()?;
    (0..frames)
        .map(|n| {
            let t = if frames <= 1 { 0.0 } else { n as f64 / (frames - 1) as f64 };
            let kf = interpolate_camera(path, t)?;
            Ok((crop_rect(image_w, image_h, &kf), kf.rotation))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_paths_alternate() {
        let p0 = default_camera_path(0);
        assert_eq!(p0.keyframes[0].zoom, 1.0);
        assert_eq!(p0.keyframes[1].zoom, 1.25);
        let p1 = default_camera_path(1);
        assert_eq!(p1.keyframes[0].zoom, 1.25);
        assert_eq!(p1.keyframes[1].zoom, 1.0);
        assert_eq!(default_camera_path(2), p0);
        for p in [&p0, &p1] {
            p.validate().unwrap();
            assert!(p.keyframes.iter().all(|k| k.center_x == 0.5 && k.center_y == 0.5 && k.rotation == 0.0));
        }
    }

    #[test]
    fn interpolation_examples() {
        let lin = CameraPath::new(
            vec![CameraKeyframe::centered(0.0, 1.0), CameraKeyframe::centered(1.0, 1.2)],
            Easing::Linear,
        )
        .unwrap();
        assert_eq!(interpolate_camera(&lin, 0.0).unwrap(), lin.keyframes[0]);
        assert!((interpolate_camera(&lin, 0.5).unwrap().zoom - 1.1).abs() < 1e-12);
        let smooth = CameraPath {
            easing: Easing::Smoothstep,
            ..lin.clone()
        };
        assert!((interpolate_camera(&smooth, 0.5).unwrap().zoom - 1.1).abs() < 1e-12);
        assert!(interpolate_camera(&lin, 1.5).is_err());
        assert!(interpolate_camera(&lin, -0.1).is_err());
    }

    #[test]
    fn crop_examples() {
        let kf = |zoom, cx| CameraKeyframe {
            t: 0.0,
            zoom,
            center_x: cx,
            center_y: 0.5,
            rotation: 0.0,
        };
        assert_eq!(crop_rect(1024, 1024, &kf(2.0, 0.5)), CropRect { x: 256, y: 256, w: 512, h: 512 });
        assert_eq!(crop_rect(1024, 1024, &kf(1.0, 0.9)), CropRect { x: 0, y: 0, w: 1024, h: 1024 });
        assert_eq!(crop_rect(1024, 1024, &kf(2.0, 0.0)), CropRect { x: 0, y: 256, w: 512, h: 512 });
        assert_eq!(crop_rect(1024, 1024, &kf(2.0, 1.0)), CropRect { x: 512, y: 256, w: 512, h: 512 });
    }

    #[test]
    fn crop_is_even_and_inside_for_odd_images() {
        let kf = CameraKeyframe {
            t: 0.0,
            zoom: 1.0,
            center_x: 1.0,
            center_y: 1.0,
            rotation: 0.0,
        };
        let r = crop_rect(513, 301, &kf);
        assert!(r.within(513, 301));
        assert_eq!((r.w % 2, r.h % 2, r.x % 2, r.y % 2), (0, 0, 0, 0));
    }

    #[test]
    fn path_validation() {
        let k = CameraKeyframe::centered;
        assert!(CameraPath::new(vec![k(0.0, 1.0)], Easing::Linear).is_err());
        assert!(CameraPath::new(vec![k(0.0, 1.0), k(0.9, 1.0)], Easing::Linear).is_err());
        assert!(CameraPath::new(vec![k(0.0, 1.0), k(0.5, 1.1), k(0.5, 1.2), k(1.0, 1.0)], Easing::Linear).is_err());
        assert!(CameraPath::new(vec![k(0.0, 0.5), k(1.0, 1.0)], Easing::Linear).is_err());
        assert!(CameraPath::new(vec![k(0.0, 1.0), k(1.0, 4.5)], Easing::Linear).is_err());
    }

    #[test]
    fn frame_plan_endpoints() {
        let plan = frame_plan(&default_camera_path(0), 512, 512, 100).unwrap();
        assert_eq!(plan.len(), 100);
        assert_eq!(plan[0].0, CropRect { x: 0, y: 0, w: 512, h: 512 });
        assert_eq!(plan[99].0, crop_rect(512, 512, &CameraKeyframe::centered(1.0, 1.25)));
    }
}
