//! Atomic file output and little-endian f32 payload helpers shared by the
//! grid, sample-set and checkpoint formats.

use std::fs;
use std::io::{self, BufRead, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Writes through a temporary sibling file and renames it over `path` once
/// `body` succeeds, so a failed write never leaves a partial artifact.
pub fn atomic_write<F>(path: &Path, body: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut w = BufWriter::new(file);
        body(&mut w)?;
        w.flush().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

pub fn write_f32s(w: &mut dyn Write, values: impl IntoIterator<Item = f32>) -> io::Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads the JSON header line (without its terminating newline).
pub fn read_header_line(r: &mut dyn BufRead) -> Result<String> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line)
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::MalformedHeader("missing header line terminator".into()));
    }
    line.pop();
    String::from_utf8(line).map_err(|_| Error::MalformedHeader("header is not UTF-8".into()))
}

/// Reads exactly `count` little-endian f32 values and rejects trailing bytes.
pub fn read_f32_payload(r: &mut dyn Read, count: usize) -> Result<Vec<f32>> {
    let expected = count * 4;
    let mut bytes = Vec::with_capacity(expected);
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::MalformedHeader(format!(
            "{} trailing bytes after payload",
            bytes.len() - expected
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}
