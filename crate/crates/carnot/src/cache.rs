//! File-backed cache for expensive constants, keyed by a canonical hash of
//! the full input description (algebra, distance, subgroup, budget, seed).

use crate::qmc::MeasureEstimate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

#[derive(Debug, Default, Serialize, Deserialize)]
struct CacheFile {
    entries: BTreeMap<String, MeasureEstimate>,
}

/// Key-value store persisted as a single JSON file. Writes go through a
/// temp-file rename, and the in-process map is protected by a mutex, so
/// concurrent updates are last-writer-wins but never corrupt the file.
#[derive(Debug)]
pub struct ConstantCache {
    path: Option<PathBuf>,
    state: Mutex<CacheFile>,
}

impl ConstantCache {
    /// In-memory cache only.
    pub fn ephemeral() -> Self {
        Self { path: None, state: Mutex::new(CacheFile::default()) }
    }

    pub fn open(dir: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("constants.json");
        let state = if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            serde_json::from_str(&text).unwrap_or_default()
        } else {
            CacheFile::default()
        };
        Ok(Self { path: Some(path), state: Mutex::new(state) })
    }

    pub fn get(&self, key: &str) -> Option<MeasureEstimate> {
        self.state.lock().unwrap().entries.get(key).cloned()
    }

    pub fn put(&self, key: &str, value: MeasureEstimate) {
        let mut state = self.state.lock().unwrap();
        state.entries.insert(key.to_string(), value);
        if let Some(path) = &self.path {
            if let Ok(text) = serde_json::to_string_pretty(&*state) {
                let tmp = path.with_extension("json.tmp");
                if std::fs::write(&tmp, text).is_ok() {
                    let _ = std::fs::rename(&tmp, path);
                }
            }
        }
    }
}

/// Canonical cache key: SHA-256 over sorted `(name, value)` pairs.
pub fn cache_key(parts: &[(&str, String)]) -> String {
    let mut sorted: Vec<_> = parts.to_vec();
    sorted.sort();
    let mut hasher = Sha256::new();
    for (k, v) in sorted {
        hasher.update(k.as_bytes());
        hasher.update([0u8]);
        hasher.update(v.as_bytes());
        hasher.update([0xffu8]);
    }
    hex_string(&hasher.finalize())
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_reload() {
        let dir = tempfile::tempdir().unwrap();
        let key = cache_key(&[("group", "heis1".into()), ("seed", "7".into())]);
        {
            let c = ConstantCache::open(dir.path()).unwrap();
            assert!(c.get(&key).is_none());
            c.put(&key, MeasureEstimate::exact(1.5, 7));
        }
        let c = ConstantCache::open(dir.path()).unwrap();
        assert_eq!(c.get(&key).unwrap().value, 1.5);
    }

    #[test]
    fn key_is_order_independent() {
        let a = cache_key(&[("x", "1".into()), ("y", "2".into())]);
        let b = cache_key(&[("y", "2".into()), ("x", "1".into())]);
        assert_eq!(a, b);
    }
}
