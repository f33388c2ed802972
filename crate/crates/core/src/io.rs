//! File helpers: JSONL, simple TSV maps, and atomic writes.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

impl IoError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        IoError::Parse { path: path.to_path_buf(), line, message: message.into() }
    }
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, io::Result<String>)>, IoError> {
    let file = File::open(path).map_err(|e| IoError::io(path, e))?;
    Ok(BufReader::new(file).lines().enumerate().map(|(i, l)| (i + 1, l)))
}

/// Reads a JSONL file. Blank lines are skipped; any malformed line is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let mut out = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| IoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| IoError::parse(path, line_no, e.to_string()))?;
        out.push(value);
    }
    Ok(out)
}

/// Serializes items one per line.
pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("serializable value"));
        out.push('\n');
    }
    out
}

/// Reads `key<TAB>value` lines. `#` comments and blank lines are ignored; later keys win.
pub fn read_tsv_map(path: &Path) -> Result<BTreeMap<String, String>, IoError> {
    let mut out = BTreeMap::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| IoError::io(path, e))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (k, v) = trimmed
            .split_once('\t')
            .ok_or_else(|| IoError::parse(path, line_no, "expected key<TAB>value"))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Writes `contents` to a temporary file next to `path`, then renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(path, e))?;
    tmp.write_all(contents).map_err(|e| IoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}
