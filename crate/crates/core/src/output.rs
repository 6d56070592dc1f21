//! Atomic file writes and CSV encoding.
//!
//! Every artifact is written to a temporary file in its destination
//! directory and renamed into place, so readers never see partial output.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Serialises `rows` with a header row, comma separated, LF terminated.
pub fn csv_bytes<T: serde::Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Format(format!("csv flush: {}", e.error())))
}

/// Like [`csv_bytes`], but an empty table still carries its header.
pub fn csv_bytes_with_header<T: serde::Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    if rows.is_empty() {
        let mut out = header.join(",").into_bytes();
        out.push(b'\n');
        return Ok(out);
    }
    csv_bytes(rows)
}

pub fn write_csv<T: serde::Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes_with_header(header, rows)?)
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
