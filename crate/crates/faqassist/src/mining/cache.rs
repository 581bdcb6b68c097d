//! Per-stage output cache keyed by a content hash of the stage inputs.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::store::{write_atomic, StoreError};

#[derive(Serialize, Deserialize)]
struct Entry<T> {
    stage: String,
    key: String,
    output: T,
}

/// Stage outputs stored as `<dir>/<stage>-<key>.json`. A cache without a
/// directory never hits.
#[derive(Debug, Clone, Default)]
pub struct StageCache {
    dir: Option<PathBuf>,
}

impl StageCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        Self { dir }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// SHA-256 over the length-prefixed parts, hex encoded.
    pub fn key(stage: &str, parts: &[&[u8]]) -> String {
        let mut h = Sha256::new();
        for part in std::iter::once(stage.as_bytes()).chain(parts.iter().copied()) {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part);
        }
        hex::encode(h.finalize())
    }

    fn path(&self, stage: &str, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{stage}-{key}.json")))
    }

    pub fn load<T: DeserializeOwned>(&self, stage: &str, key: &str) -> Option<T> {
        let path = self.path(stage, key)?;
        let raw = std::fs::read(&path).ok()?;
        match serde_json::from_slice::<Entry<T>>(&raw) {
            Ok(e) if e.stage == stage && e.key == key => Some(e.output),
            Ok(_) => None,
            Err(err) => {
                tracing::warn!(path = %path.display(), error = %err, "ignoring unreadable cache entry");
                None
            }
        }
    }

    pub fn store<T: Serialize>(&self, stage: &str, key: &str, output: &T) -> Result<(), StoreError> {
        let Some(path) = self.path(stage, key) else { return Ok(()) };
        let bytes = serde_json::to_vec(&Entry {
            stage: stage.to_string(),
            key: key.to_string(),
            output,
        })
        .map_err(|e| StoreError::Io {
            path: path.clone(),
            source: std::io::Error::other(e),
        })?;
        write_atomic(&path, &bytes)
    }

    /// Writes a named side file (an intermediate CSV) next to the entries.
    pub fn write_artifact(&self, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        match &self.dir {
            Some(d) => write_atomic(&d.join(name), bytes),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_depends_on_every_part() {
        let a = StageCache::key("s", &[b"ab", b"c"]);
        assert_eq!(a.len(), 64);
        assert_ne!(a, StageCache::key("s", &[b"a", b"bc"]));
        assert_ne!(a, StageCache::key("t", &[b"ab", b"c"]));
        assert_eq!(a, StageCache::key("s", &[b"ab", b"c"]));
    }

    #[test]
    fn roundtrip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let cache = StageCache::new(Some(dir.path().to_path_buf()));
        let key = StageCache::key("extract", &[b"x"]);
        assert_eq!(cache.load::<Vec<u32>>("extract", &key), None);
        cache.store("extract", &key, &vec![1u32, 2]).unwrap();
        assert_eq!(cache.load::<Vec<u32>>("extract", &key), Some(vec![1, 2]));
        assert_eq!(cache.load::<Vec<u32>>("critic", &key), None);

        std::fs::write(dir.path().join(format!("extract-{key}.json")), b"{trunc").unwrap();
        assert_eq!(cache.load::<Vec<u32>>("extract", &key), None);

        let off = StageCache::default();
        off.store("extract", &key, &vec![1u32]).unwrap();
        assert_eq!(off.load::<Vec<u32>>("extract", &key), None);
    }
}
