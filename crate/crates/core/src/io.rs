//! Content hashing and stage stamps shared by the pipeline stages.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// SHA-256 of the value's JSON serialisation, hex encoded.
pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serialises");
    hex::encode(Sha256::digest(&json))
}

pub fn bytes_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Marker written by every stage next to its outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStamp {
    pub stage: String,
    pub config_hash: String,
}

pub const STAMP_FILE: &str = "stamp.json";

pub fn write_stamp(dir: &Path, stage: &str, config_hash: &str) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let s = StageStamp {
        stage: stage.to_string(),
        config_hash: config_hash.to_string(),
    };
    std::fs::write(dir.join(STAMP_FILE), serde_json::to_string_pretty(&s).expect("stamp serialises"))
}

pub fn read_stamp(dir: &Path) -> Option<StageStamp> {
    let text = std::fs::read_to_string(dir.join(STAMP_FILE)).ok()?;
    serde_json::from_str(&text).ok()
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_file(path: &Path, text: impl AsRef<[u8]>) -> std::io::Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p)?;
    }
    std::fs::write(path, text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"k": 1, "m": "DT"}));
        assert_eq!(a, config_hash(&serde_json::json!({"k": 1, "m": "DT"})));
        assert_ne!(a, config_hash(&serde_json::json!({"k": 2, "m": "DT"})));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn stamp_round_trip() {
        let d = tempfile::tempdir().unwrap();
        write_stamp(d.path(), "extract", "abc").unwrap();
        assert_eq!(read_stamp(d.path()).unwrap().config_hash, "abc");
    }
}
