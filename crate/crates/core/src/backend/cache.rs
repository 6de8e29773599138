use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, SamplingParams};

/// Everything that identifies one backend request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyMaterial {
    pub backend: String,
    pub model: String,
    pub kind: String,
    pub prompt: String,
    pub params: Option<SamplingParams>,
    pub tokens: Option<Vec<String>>,
    pub sample_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey {
    pub hash: String,
}

impl CacheKey {
    pub fn of(material: &KeyMaterial) -> Self {
        let bytes = serde_json::to_vec(material).expect("key material serializes");
        Self { hash: hex::encode(Sha256::digest(&bytes)) }
    }

    pub fn shard(&self) -> &str {
        &self.hash[..2]
    }
}

#[derive(Serialize, Deserialize)]
struct Entry<T> {
    key: KeyMaterial,
    value: T,
}

/// One JSON file per entry at `<root>/<backend>/<2-hex shard>/<hash>.json`.
///
/// Writes go to a temporary file in the shard directory and are renamed
/// into place, so readers never observe a partial entry. Concurrent writers
/// of the same key race benignly: the content is identical.
#[derive(Debug, Clone)]
pub struct DiskCache {
    root: PathBuf,
}

impl DiskCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, material: &KeyMaterial) -> PathBuf {
        let key = CacheKey::of(material);
        self.root
            .join(sanitize(&material.backend))
            .join(key.shard())
            .join(format!("{}.json", key.hash))
    }

    pub fn get<T: DeserializeOwned>(&self, material: &KeyMaterial) -> Result<Option<T>, BackendError> {
        let path = self.path_for(material);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(BackendError::Cache(format!("{}: {e}", path.display()))),
        };
        let entry: Entry<T> = serde_json::from_slice(&bytes)
            .map_err(|e| BackendError::Cache(format!("{}: {e}", path.display())))?;
        if &entry.key != material {
            // Hash collision or a hand-edited file; treat as a miss.
            log::warn!("cache entry {} does not match its key", path.display());
            return Ok(None);
        }
        Ok(Some(entry.value))
    }

    pub fn put<T: Serialize>(&self, material: &KeyMaterial, value: &T) -> Result<(), BackendError> {
        let path = self.path_for(material);
        let dir = path.parent().expect("cache path has a parent");
        let err = |e: std::io::Error| BackendError::Cache(format!("{}: {e}", path.display()));
        fs::create_dir_all(dir).map_err(err)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(err)?;
        serde_json::to_writer_pretty(&mut tmp, &Entry { key: material.clone(), value })
            .map_err(|e| BackendError::Cache(e.to_string()))?;
        tmp.write_all(b"\n").map_err(err)?;
        tmp.persist(&path).map_err(|e| err(e.error))?;
        Ok(())
    }
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}
