//! Newline-delimited record files, atomic writes and checksums.
//!
//! Every record line carries a `schema_version` field. Writers never leave a
//! partially written file under its final name: content goes to a hidden
//! temporary sibling first and is renamed into place once flushed.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Current schema version stamped into every record line.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    record: &'a T,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

/// Serializes one record as a single JSON line (without the trailing newline).
pub fn record_line<T: Serialize>(record: &T) -> String {
    serde_json::to_string(&Versioned {
        schema_version: SCHEMA_VERSION,
        record,
    })
    .expect("record types serialize infallibly")
}

pub fn encode_records<T: Serialize>(records: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(record_line(r).as_bytes());
        out.push(b'\n');
    }
    out
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    atomic_write(path, &encode_records(records))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Record {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads a newline-delimited record file. Blank lines are skipped; a
/// `schema_version` newer than [`SCHEMA_VERSION`] is rejected.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let probe: VersionProbe = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        if let Some(v) = probe.schema_version {
            if v > SCHEMA_VERSION {
                return Err(bad(format!("unsupported schema_version {v}")));
            }
        }
        out.push(serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp"))
}

/// Writes `bytes` to `path` via a temporary file and rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = temp_sibling(path);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Reads a word-per-line lexicon file: lowercased, blank lines and `#`
/// comments skipped.
pub fn read_word_list(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_word_list(&text))
}

pub fn parse_word_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Row {
        id: String,
        value: f64,
    }

    #[test]
    fn records_carry_schema_version_and_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.ndjson");
        let rows = vec![
            Row {
                id: "a".into(),
                value: 0.5,
            },
            Row {
                id: "b".into(),
                value: -1.25,
            },
        ];
        write_records(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().all(|l| l.starts_with("{\"schema_version\":1,")));
        let back: Vec<Row> = read_records(&path).unwrap();
        assert_eq!(back, rows);
        assert!(!temp_sibling(&path).exists());
    }

    #[test]
    fn newer_schema_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.ndjson");
        fs::write(&path, "{\"schema_version\":99,\"id\":\"a\",\"value\":1.0}\n").unwrap();
        let err = read_records::<Row>(&path).unwrap_err();
        assert!(matches!(err, Error::Record { line: 1, .. }));
    }

    #[test]
    fn word_list_skips_comments() {
        assert_eq!(parse_word_list("# c\nThe\n\n and \n"), vec!["the", "and"]);
    }
}
