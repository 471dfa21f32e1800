//! Durable JSONL and whole-file writes.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::ServiceError;

/// Appends one JSON line and fsyncs before returning.
pub fn append_line<T: Serialize>(path: &Path, row: &T) -> Result<(), ServiceError> {
    let mut line = serde_json::to_vec(row).expect("serialisable row");
    line.push(b'\n');
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| ServiceError::io(path, e))?;
    f.write_all(&line).map_err(|e| ServiceError::io(path, e))?;
    f.sync_data().map_err(|e| ServiceError::io(path, e))
}

/// Loads a JSONL log written by [`append_line`]. A torn final line (no
/// trailing newline) left by a crash is cut off so later appends stay valid.
pub fn recover_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ServiceError> {
    let bytes = match fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ServiceError::io(path, e)),
    };
    let complete = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    if complete < bytes.len() {
        tracing::warn!(path = %path.display(), bytes = bytes.len() - complete, "discarding torn trailing line");
        let f = OpenOptions::new().write(true).open(path).map_err(|e| ServiceError::io(path, e))?;
        f.set_len(complete as u64).map_err(|e| ServiceError::io(path, e))?;
        f.sync_all().map_err(|e| ServiceError::io(path, e))?;
    }
    let mut rows = Vec::new();
    for (i, line) in bytes[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        rows.push(serde_json::from_slice(line).map_err(|e| ServiceError::Corrupt {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

/// Replaces `path` atomically: write a sibling temp file, fsync, rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ServiceError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| ServiceError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| ServiceError::io(&tmp, e))?;
    f.sync_all().map_err(|e| ServiceError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| ServiceError::io(path, e))?;
    if let Some(dir) = path.parent() {
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}
