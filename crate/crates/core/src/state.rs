//! Versioned JSON snapshots and the append-only review log.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt state file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("state file {path} has format_version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u64,
        expected: u32,
    },
    #[error("state file {path} holds {found:?}, expected {expected:?}")]
    KindMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
}

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format_version: u32,
    kind: String,
    payload: T,
}

/// Write `value` as a versioned snapshot. The file is replaced atomically
/// through a sibling temporary file.
pub fn save_state<T: Serialize>(kind: &str, value: &T, path: &Path) -> Result<(), StateError> {
    let io = |source| StateError::Io {
        path: path.to_path_buf(),
        source,
    };
    let env = Envelope {
        format_version: FORMAT_VERSION,
        kind: kind.to_string(),
        payload: value,
    };
    let bytes = serde_json::to_vec(&env).map_err(|e| StateError::Corrupt {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)?;
    Ok(())
}

pub fn load_state<T: DeserializeOwned>(kind: &str, path: &Path) -> Result<T, StateError> {
    let bytes = fs::read(path).map_err(|source| StateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let corrupt = |reason: String| StateError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let value: Value = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    let version = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| corrupt("missing format_version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(StateError::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let found = value.get("kind").and_then(Value::as_str).unwrap_or_default();
    if found != kind {
        return Err(StateError::KindMismatch {
            path: path.to_path_buf(),
            found: found.to_string(),
            expected: kind.to_string(),
        });
    }
    let env: Envelope<T> = serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    Ok(env.payload)
}

/// Append-only JSON-lines file.
pub struct AppendLog {
    path: PathBuf,
    file: fs::File,
}

impl AppendLog {
    pub fn open(path: &Path) -> Result<Self, StateError> {
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| StateError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn append<T: Serialize>(&mut self, entry: &T) -> Result<(), StateError> {
        let mut line = serde_json::to_vec(entry).map_err(|e| StateError::Corrupt {
            path: self.path.clone(),
            reason: e.to_string(),
        })?;
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|_| self.file.flush())
            .map_err(|source| StateError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

pub fn read_log<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StateError> {
    let file = fs::File::open(path).map_err(|source| StateError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| StateError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StateError::Corrupt {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}
