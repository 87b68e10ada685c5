//! Content-addressed asset storage.
//!
//! Every stored artifact lives at `assets/<first two hex>/<sha256>.<ext>`
//! under the project root, so identical bytes are stored once and the path is
//! a pure function of the content.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::sha256_hex;
use crate::media::{probe_bytes, MediaInfo};

pub const ASSETS_DIR: &str = "assets";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAsset {
    pub content_hash: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    /// Safety flag reported by the image backend, when it reports one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nsfw: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioAsset {
    pub content_hash: String,
    pub path: String,
    pub sample_rate: u32,
    pub channels: u16,
    pub frames: u64,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAsset {
    pub content_hash: String,
    pub path: String,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    pub frames: u64,
    pub duration: f64,
}

/// Anything that points at bytes on disk by hash.
pub trait StoredAsset {
    fn content_hash(&self) -> &str;
    fn path(&self) -> &str;
}

macro_rules! stored_asset {
    ($($t:ty),*) => {$(
        impl StoredAsset for $t {
            fn content_hash(&self) -> &str { &self.content_hash }
            fn path(&self) -> &str { &self.path }
        }
    )*};
}
stored_asset!(ImageAsset, AudioAsset, VideoAsset);

#[derive(Debug, Clone)]
pub struct AssetStore {
    root: PathBuf,
}

impl AssetStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn relative_path(hash: &str, ext: &str) -> String {
        format!("{ASSETS_DIR}/{}/{hash}.{ext}", &hash[..2])
    }

    /// Absolute path of a project-relative path.
    pub fn abs(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Stores bytes under their hash and returns `(hash, relative path)`.
    pub fn put_bytes(&self, bytes: &[u8], ext: &str) -> Result<(String, String)> {
        let hash = sha256_hex(bytes);
        let rel = Self::relative_path(&hash, ext);
        let target = self.abs(&rel);
        if !self.verify(&rel, &hash) {
            let dir = target.parent().expect("asset path has a parent");
            std::fs::create_dir_all(dir)?;
            write_atomic(&target, bytes)?;
        }
        Ok((hash, rel))
    }

    pub fn put_image(&self, bytes: &[u8], nsfw: Option<bool>) -> Result<ImageAsset> {
        match probe_bytes(bytes) {
            Ok(MediaInfo::Image { width, height }) => {
                let (content_hash, path) = self.put_bytes(bytes, "png")?;
                Ok(ImageAsset {
                    content_hash,
                    path,
                    width,
                    height,
                    nsfw,
                })
            }
            Ok(other) => Err(corrupt_bytes(format!("expected a PNG image, got {other:?}"))),
            Err(reason) => Err(corrupt_bytes(reason)),
        }
    }

    pub fn put_audio(&self, bytes: &[u8]) -> Result<AudioAsset> {
        match probe_bytes(bytes) {
            Ok(MediaInfo::Audio {
                sample_rate,
                channels,
                frames,
                duration,
            }) => {
                if frames == 0 {
                    return Err(corrupt_bytes("audio has zero duration".into()));
                }
                let (content_hash, path) = self.put_bytes(bytes, "wav")?;
                Ok(AudioAsset {
                    content_hash,
                    path,
                    sample_rate,
                    channels,
                    frames,
                    duration,
                })
            }
            Ok(other) => Err(corrupt_bytes(format!("expected WAV audio, got {other:?}"))),
            Err(reason) => Err(corrupt_bytes(reason)),
        }
    }

    pub fn put_video(&self, bytes: &[u8]) -> Result<VideoAsset> {
        match probe_bytes(bytes) {
            Ok(MediaInfo::Video {
                width,
                height,
                fps,
                frames,
                duration,
                ..
            }) => {
                let (content_hash, path) = self.put_bytes(bytes, "mp4")?;
                Ok(VideoAsset {
                    content_hash,
                    path,
                    width,
                    height,
                    fps,
                    frames,
                    duration,
                })
            }
            Ok(other) => Err(corrupt_bytes(format!("expected MP4 video, got {other:?}"))),
            Err(reason) => Err(corrupt_bytes(reason)),
        }
    }

    pub fn read(&self, rel: &str) -> Result<Vec<u8>> {
        Ok(std::fs::read(self.abs(rel))?)
    }

    /// True when the file exists and its bytes hash to `hash`.
    pub fn verify(&self, rel: &str, hash: &str) -> bool {
        match std::fs::read(self.abs(rel)) {
            Ok(bytes) => sha256_hex(&bytes) == hash,
            Err(_) => false,
        }
    }

    pub fn verify_asset(&self, asset: &dyn StoredAsset) -> bool {
        self.verify(asset.path(), asset.content_hash())
    }
}

fn corrupt_bytes(reason: String) -> Error {
    Error::CorruptAsset {
        path: "<backend output>".into(),
        reason,
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(target: &Path, bytes: &[u8]) -> Result<()> {
    let dir = target.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(std::fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(target).map_err(|e| e.error)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::Pcm;

    #[test]
    fn identical_bytes_stored_once() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::new(dir.path());
        let (h1, p1) = store.put_bytes(b"hello", "txt").unwrap();
        let (h2, p2) = store.put_bytes(b"hello", "txt").unwrap();
        assert_eq!((h1.clone(), p1.clone()), (h2, p2));
        assert_eq!(p1, format!("assets/{}/{h1}.txt", &h1[..2]));
        assert!(store.verify(&p1, &h1));
    }

    #[test]
    fn tampering_fails_verification() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::new(dir.path());
        let asset = store.put_audio(&Pcm::silence(8000, 800).encode_wav()).unwrap();
        assert!(store.verify_asset(&asset));
        std::fs::write(store.abs(&asset.path), b"junk").unwrap();
        assert!(!store.verify_asset(&asset));
    }

    #[test]
    fn rejects_invalid_image_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::new(dir.path());
        assert!(matches!(store.put_image(b"not a png", None), Err(Error::CorruptAsset { .. })));
    }

    #[test]
    fn rejects_empty_audio() {
        let dir = tempfile::tempdir().unwrap();
        let store = AssetStore::new(dir.path());
        let empty = Pcm::silence(8000, 0).encode_wav();
        assert!(store.put_audio(&empty).is_err());
    }
}
