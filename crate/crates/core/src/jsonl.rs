//! Line-delimited JSON helpers shared by every file format in the toolkit.

use serde::de::DeserializeOwned;
use serde::Serialize;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

/// A parsed line, tagged with its 1-based line number.
pub struct Numbered<T> {
    pub line: usize,
    pub value: T,
}

/// Parse every non-blank line of `input` as a `T`.
pub fn read_from<T: DeserializeOwned>(input: impl BufRead) -> Result<Vec<Numbered<T>>, JsonlError> {
    let mut out = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| JsonlError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value = serde_json::from_str(trimmed).map_err(|e| JsonlError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        out.push(Numbered {
            line: line_no,
            value,
        });
    }
    Ok(out)
}

pub fn read_path<T: DeserializeOwned>(path: &Path) -> Result<Vec<Numbered<T>>, JsonlError> {
    let file = File::open(path).map_err(|source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_from(BufReader::new(file))
}

/// Serialize `records` one per line. Output bytes depend only on the records.
pub fn write_to<T: Serialize>(
    mut out: impl Write,
    records: impl IntoIterator<Item = T>,
) -> io::Result<usize> {
    let mut n = 0;
    for record in records {
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
        n += 1;
    }
    out.flush()?;
    Ok(n)
}

/// Write `records` to `path` through a temp file and rename, so readers never
/// observe a half-written file.
pub fn write_path<T: Serialize>(
    path: &Path,
    records: impl IntoIterator<Item = T>,
) -> Result<usize, JsonlError> {
    let io_err = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(io_err)?;
    let tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io_err)?;
    let n = {
        let mut w = BufWriter::new(tmp.as_file());
        let n = write_to(&mut w, records).map_err(io_err)?;
        w.flush().map_err(io_err)?;
        n
    };
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(n)
}
