//! Content-addressed store for page photos and narration audio.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use parking_lot::RwLock;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of `bytes`; the key of a stored asset.
pub fn content_key(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredAsset {
    pub media_type: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Default)]
pub struct AssetStore {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, StoredAsset>>,
}

impl AssetStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: impl AsRef<Path>) -> std::io::Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir: Some(dir), memory: RwLock::default() })
    }

    /// Store `bytes` and return its key. Identical content is stored once.
    pub fn put(&self, media_type: &str, bytes: &[u8]) -> std::io::Result<String> {
        let key = content_key(bytes);
        if self.memory.read().contains_key(&key) {
            return Ok(key);
        }
        if let Some(dir) = &self.dir {
            let path = dir.join(&key);
            if !path.exists() {
                let tmp = dir.join(format!("{key}.tmp"));
                std::fs::write(&tmp, bytes)?;
                std::fs::rename(&tmp, &path)?;
                std::fs::write(dir.join(format!("{key}.type")), media_type)?;
            }
        }
        self.memory.write().insert(
            key.clone(),
            StoredAsset { media_type: media_type.to_string(), bytes: bytes.to_vec() },
        );
        Ok(key)
    }

    pub fn get(&self, key: &str) -> Option<StoredAsset> {
        if !key.chars().all(|c| c.is_ascii_hexdigit()) || key.len() != 64 {
            return None;
        }
        if let Some(a) = self.memory.read().get(key) {
            return Some(a.clone());
        }
        let dir = self.dir.as_ref()?;
        let bytes = std::fs::read(dir.join(key)).ok()?;
        let media_type = std::fs::read_to_string(dir.join(format!("{key}.type")))
            .unwrap_or_else(|_| "application/octet-stream".into());
        let asset = StoredAsset { media_type, bytes };
        self.memory.write().insert(key.to_string(), asset.clone());
        Some(asset)
    }

    pub fn len(&self) -> usize {
        self.memory.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedups_identical_content() {
        let store = AssetStore::in_memory();
        let a = store.put("image/png", b"photo").unwrap();
        let b = store.put("image/png", b"photo").unwrap();
        assert_eq!(a, b);
        assert_eq!(store.len(), 1);
        assert_eq!(store.get(&a).unwrap().bytes, b"photo");
        assert!(store.get("../etc/passwd").is_none());
    }

    #[test]
    fn persists_to_disk() {
        let dir = tempfile::tempdir().unwrap();
        let key = AssetStore::open(dir.path()).unwrap().put("audio/x-stub", b"abc").unwrap();
        let reopened = AssetStore::open(dir.path()).unwrap();
        let asset = reopened.get(&key).unwrap();
        assert_eq!(asset.bytes, b"abc");
        assert_eq!(asset.media_type, "audio/x-stub");
    }
}
