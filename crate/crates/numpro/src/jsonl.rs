//! JSON Lines reading and writing with line-numbered errors.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Schema {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl JsonlError {
    pub fn line(&self) -> Option<usize> {
        match self {
            JsonlError::Schema { line, .. } => Some(*line),
            JsonlError::Io { .. } => None,
        }
    }
}

/// One parsed line and its 1-based line number.
#[derive(Debug, Clone)]
pub struct Line<T> {
    pub number: usize,
    pub value: T,
}

/// Reads every non-blank line of `path`, failing on the first line that does
/// not match `T`.
pub fn read<T: DeserializeOwned>(path: &Path) -> Result<Vec<Line<T>>, JsonlError> {
    let mut out = Vec::new();
    for line in read_lenient(path)? {
        out.push(Line {
            number: line.number,
            value: line.value.map_err(|source| JsonlError::Schema {
                path: path.to_path_buf(),
                line: line.number,
                source,
            })?,
        });
    }
    Ok(out)
}

/// Like [`read`], but hands back per-line parse results so callers can skip
/// and count bad rows.
pub fn read_lenient<T: DeserializeOwned>(
    path: &Path,
) -> Result<Vec<Line<Result<T, serde_json::Error>>>, JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(Line {
            number: i + 1,
            value: serde_json::from_str(&line),
        });
    }
    Ok(out)
}

pub fn write<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}
