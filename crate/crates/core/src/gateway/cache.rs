use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::assets::{write_atomic, AssetStore, AudioAsset, ImageAsset, VideoAsset};
use crate::error::Result;
use crate::hashing::sha256_hex;

pub const CACHE_DIR: &str = "cache";

/// A cached backend (or render) result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Artifact {
    Text { text: String },
    Image { image: ImageAsset },
    Audio { audio: AudioAsset },
    Stems { vocals: AudioAsset, instruments: AudioAsset },
    Video { video: VideoAsset },
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheEntry {
    request_hash: String,
    kind: String,
    artifact: Artifact,
    /// Digest of the text for text artifacts; assets carry their own hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text_sha256: Option<String>,
}

/// Request-hash keyed cache stored under `cache/` in the project.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
    store: AssetStore,
}

impl ResponseCache {
    pub fn new(store: AssetStore) -> Self {
        Self {
            dir: store.root().join(CACHE_DIR),
            store,
        }
    }

    fn entry_path(&self, request_hash: &str) -> PathBuf {
        self.dir.join(format!("{request_hash}.json"))
    }

    /// Returns the artifact if present and intact. Corrupt entries are
    /// discarded and reported as a miss.
    pub fn lookup(&self, request_hash: &str) -> Option<Artifact> {
        let path = self.entry_path(request_hash);
        let raw = std::fs::read(&path).ok()?;
        let entry: CacheEntry = match serde_json::from_slice(&raw) {
            Ok(e) => e,
            Err(e) => {
                warn!("discarding unreadable cache entry {}: {e}", path.display());
                let _ = std::fs::remove_file(&path);
                return None;
            }
        };
        if entry.request_hash != request_hash || !self.artifact_intact(&entry) {
            warn!("discarding cache entry {request_hash}: content hash mismatch");
            let _ = std::fs::remove_file(&path);
            return None;
        }
        Some(entry.artifact)
    }

    fn artifact_intact(&self, entry: &CacheEntry) -> bool {
        match &entry.artifact {
            Artifact::Text { text } => entry.text_sha256.as_deref() == Some(sha256_hex(text.as_bytes()).as_str()),
            Artifact::Image { image } => self.store.verify_asset(image),
            Artifact::Audio { audio } => self.store.verify_asset(audio),
            Artifact::Stems { vocals, instruments } => {
                self.store.verify_asset(vocals) && self.store.verify_asset(instruments)
            }
            Artifact::Video { video } => self.store.verify_asset(video),
        }
    }

    pub fn store(&self, request_hash: &str, kind: &str, artifact: &Artifact) -> Result<()> {
        std::fs::create_dir_all(&self.dir)?;
        let text_sha256 = match artifact {
            Artifact::Text { text } => Some(sha256_hex(text.as_bytes())),
            _ => None,
        };
        let entry = CacheEntry {
            request_hash: request_hash.to_string(),
            kind: kind.to_string(),
            artifact: artifact.clone(),
            text_sha256,
        };
        write_atomic(&self.entry_path(request_hash), &serde_json::to_vec_pretty(&entry)?)
    }
}

/// Per-key mutexes so concurrent identical requests run once.
#[derive(Debug, Default)]
pub struct SingleFlight {
    keys: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl SingleFlight {
    pub fn key(&self, key: &str) -> Arc<Mutex<()>> {
        self.keys
            .lock()
            .expect("single-flight map poisoned")
            .entry(key.to_string())
            .or_default()
            .clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::Pcm;

    fn cache() -> (tempfile::TempDir, ResponseCache) {
        let dir = tempfile::tempdir().unwrap();
        let cache = ResponseCache::new(AssetStore::new(dir.path()));
        (dir, cache)
    }

    #[test]
    fn store_then_lookup() {
        let (_d, cache) = cache();
        let art = Artifact::Text { text: "once".into() };
        cache.store("abc", "text", &art).unwrap();
        assert_eq!(cache.lookup("abc"), Some(art));
    }

    #[test]
    fn unknown_hash_misses() {
        let (_d, cache) = cache();
        assert_eq!(cache.lookup("nope"), None);
    }

    #[test]
    fn tampered_text_entry_is_a_miss() {
        let (dir, cache) = cache();
        cache.store("abc", "text", &Artifact::Text { text: "once".into() }).unwrap();
        let path = dir.path().join("cache/abc.json");
        let raw = std::fs::read_to_string(&path).unwrap().replace("once", "twice");
        std::fs::write(&path, raw).unwrap();
        assert_eq!(cache.lookup("abc"), None);
        assert!(!path.exists());
    }

    #[test]
    fn tampered_asset_is_a_miss() {
        let (dir, cache) = cache();
        let store = AssetStore::new(dir.path());
        let audio = store.put_audio(&Pcm::silence(8000, 80).encode_wav()).unwrap();
        cache.store("h", "tts", &Artifact::Audio { audio: audio.clone() }).unwrap();
        assert!(cache.lookup("h").is_some());
        std::fs::write(store.abs(&audio.path), b"garbage").unwrap();
        assert_eq!(cache.lookup("h"), None);
    }

    #[test]
    fn lookup_does_not_mutate() {
        let (dir, cache) = cache();
        cache.store("k", "text", &Artifact::Text { text: "x".into() }).unwrap();
        let before = std::fs::read(dir.path().join("cache/k.json")).unwrap();
        cache.lookup("k");
        cache.lookup("k");
        assert_eq!(before, std::fs::read(dir.path().join("cache/k.json")).unwrap());
    }
}
