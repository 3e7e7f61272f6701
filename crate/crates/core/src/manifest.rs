//! Append-only, schema-versioned JSONL manifests.
//!
//! Each line is one JSON object: `{"schema": 1, "kind": "<kind>", ...record}`.
//! Unparseable lines are skipped and reported; a line from a different
//! schema version aborts the read.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use tracing::warn;

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: schema version {found}, expected {SCHEMA_VERSION}")]
    SchemaVersionMismatch { path: PathBuf, line: usize, found: u64 },
    #[error("cannot serialize record: {0}")]
    Serialize(#[from] serde_json::Error),
}

/// Record types name themselves so mixed-up files are caught line by line.
pub trait ManifestRecord: Serialize + DeserializeOwned {
    const KIND: &'static str;
}

#[derive(Serialize)]
struct EnvelopeOut<'a, T> {
    schema: u64,
    kind: &'a str,
    #[serde(flatten)]
    record: &'a T,
}

#[derive(Deserialize)]
struct EnvelopeIn<T> {
    kind: String,
    #[serde(flatten)]
    record: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorruptLine {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRead<T> {
    pub records: Vec<T>,
    pub corrupt: Vec<CorruptLine>,
}

pub fn encode_line<T: ManifestRecord>(record: &T) -> Result<String, ManifestError> {
    let mut line = serde_json::to_string(&EnvelopeOut {
        schema: SCHEMA_VERSION,
        kind: T::KIND,
        record,
    })?;
    line.push('\n');
    Ok(line)
}

/// Single appender for one manifest file; safe to share between threads.
pub struct ManifestWriter {
    path: PathBuf,
    file: Mutex<File>,
}

impl ManifestWriter {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, ManifestError> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|source| ManifestError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| ManifestError::Io { path: path.clone(), source })?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append<T: ManifestRecord>(&self, record: &T) -> Result<(), ManifestError> {
        let line = encode_line(record)?;
        let mut file = self.file.lock().unwrap_or_else(|p| p.into_inner());
        file.write_all(line.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|source| ManifestError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Appends `records` to the manifest at `path`, creating it if needed.
pub fn write_manifest<T: ManifestRecord>(path: &Path, records: &[T]) -> Result<(), ManifestError> {
    let writer = ManifestWriter::open(path)?;
    for r in records {
        writer.append(r)?;
    }
    Ok(())
}

/// A missing file reads as an empty manifest.
pub fn read_manifest<T: ManifestRecord>(path: &Path) -> Result<ManifestRead<T>, ManifestError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Ok(ManifestRead {
                records: Vec::new(),
                corrupt: Vec::new(),
            })
        }
        Err(source) => {
            return Err(ManifestError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let mut records = Vec::new();
    let mut corrupt = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        match decode_line::<T>(&line) {
            Ok(record) => records.push(record),
            Err(LineError::Schema(found)) => {
                return Err(ManifestError::SchemaVersionMismatch {
                    path: path.to_path_buf(),
                    line: line_no,
                    found,
                })
            }
            Err(LineError::Corrupt(reason)) => {
                warn!(path = %path.display(), line = line_no, %reason, "skipping corrupt manifest line");
                corrupt.push(CorruptLine { line: line_no, reason });
            }
        }
    }
    Ok(ManifestRead { records, corrupt })
}

enum LineError {
    Schema(u64),
    Corrupt(String),
}

fn decode_line<T: ManifestRecord>(line: &str) -> Result<T, LineError> {
    let value: Value = serde_json::from_str(line).map_err(|e| LineError::Corrupt(e.to_string()))?;
    let schema = value
        .get("schema")
        .and_then(Value::as_u64)
        .ok_or_else(|| LineError::Corrupt("missing schema version".into()))?;
    if schema != SCHEMA_VERSION {
        return Err(LineError::Schema(schema));
    }
    let env: EnvelopeIn<T> = serde_json::from_value(value).map_err(|e| LineError::Corrupt(e.to_string()))?;
    if env.kind != T::KIND {
        return Err(LineError::Corrupt(format!("kind `{}`, expected `{}`", env.kind, T::KIND)));
    }
    Ok(env.record)
}
