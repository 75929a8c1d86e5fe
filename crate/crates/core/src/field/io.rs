//! Grid file format: one JSON header line, then raw little-endian f32 node data.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{gridded::node_count, Domain, GriddedField};
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read_f32_payload, read_header_line, write_f32s};

pub const GRID_MAGIC: &str = "nifm-grid";
pub const GRID_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridHeader {
    magic: String,
    version: u32,
    n: usize,
    dims: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    t_lo: f64,
    t_hi: f64,
}

pub fn write_grid(field: &GriddedField, w: &mut dyn Write) -> Result<()> {
    let d = &field.domain;
    let header = GridHeader {
        magic: GRID_MAGIC.into(),
        version: GRID_VERSION,
        n: d.n,
        dims: field.dims.clone(),
        lo: d.lo().to_vec(),
        hi: d.hi().to_vec(),
        t_lo: d.t_lo,
        t_hi: d.t_hi,
    };
    let io = |e| Error::io("<grid stream>", e);
    serde_json::to_writer(&mut *w, &header)?;
    w.write_all(b"\n").map_err(io)?;
    write_f32s(w, field.data.iter().copied()).map_err(io)
}

pub fn read_grid(r: &mut dyn BufRead) -> Result<GriddedField> {
    let line = read_header_line(r)?;
    let raw: serde_json::Value =
        serde_json::from_str(&line).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let magic = raw.get("magic").and_then(|m| m.as_str()).unwrap_or_default();
    if magic != GRID_MAGIC {
        return Err(Error::BadMagic {
            expected: GRID_MAGIC,
            found: magic.to_string(),
        });
    }
    let version = raw.get("version").and_then(|v| v.as_u64());
    if version != Some(GRID_VERSION as u64) {
        return Err(Error::VersionMismatch {
            expected: GRID_VERSION,
            found: version.unwrap_or(0) as u32,
        });
    }
    let h: GridHeader =
        serde_json::from_value(raw).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if !(2..=3).contains(&h.n) {
        return Err(Error::UnsupportedDimension(h.n));
    }
    if h.lo.len() != h.n || h.hi.len() != h.n || h.dims.len() != h.n + 1 {
        return Err(Error::MalformedHeader(format!(
            "bounds/dims lengths inconsistent with n={}",
            h.n
        )));
    }
    if h.dims.iter().any(|&d| d < 2) {
        return Err(Error::MalformedHeader(format!("dims {:?} below 2", h.dims)));
    }
    let domain = Domain::new(&h.lo, &h.hi, h.t_lo, h.t_hi)?;
    let count = node_count(&h.dims) * h.n;
    let data = read_f32_payload(r, count)?;
    GriddedField::new(h.dims, domain, data)
}

pub fn save_grid(field: &GriddedField, path: &Path) -> Result<()> {
    atomic_write(path, |w| write_grid(field, w))
}

pub fn load_grid(path: &Path) -> Result<GriddedField> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_grid(&mut BufReader::new(f))
}
