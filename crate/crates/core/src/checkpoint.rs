//! JSON checkpoint container shared by every trained artifact.
//!
//! ```json
//! {"format": "handguide-checkpoint/1", "kind": "denoiser", "seed": 7,
//!  "config_hash": "<sha256 of the training config>", "schedule": {...}, "model": {...}}
//! ```
//!
//! Floats are written in shortest round-trip form, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::schedule::ScheduleConfig;

pub const FORMAT: &str = "handguide-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    Denoiser,
    Discriminator,
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub format: String,
    pub kind: CheckpointKind,
    pub seed: u64,
    pub config_hash: String,
    pub schedule: Option<ScheduleConfig>,
    pub model: T,
}

/// SHA-256 of the canonical JSON form of `config`.
pub fn config_hash<C: Serialize>(config: &C) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

impl<T: Serialize + DeserializeOwned> Checkpoint<T> {
    pub fn new<C: Serialize>(
        kind: CheckpointKind,
        seed: u64,
        config: &C,
        schedule: Option<ScheduleConfig>,
        model: T,
    ) -> Self {
        Self {
            format: FORMAT.to_string(),
            kind,
            seed,
            config_hash: config_hash(config),
            schedule,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Writes through a temporary file in the target directory and renames it
    /// into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path, kind: CheckpointKind) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Self =
            serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        if ck.format != FORMAT {
            return Err(Error::Checkpoint(format!(
                "{}: unknown format `{}`",
                path.display(),
                ck.format
            )));
        }
        if ck.kind != kind {
            return Err(Error::Checkpoint(format!(
                "{}: expected a {kind:?} checkpoint, found {:?}",
                path.display(),
                ck.kind
            )));
        }
        Ok(ck)
    }
}

/// Atomic replace of `path` with `bytes`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
