//! Checkpoint format: one JSON manifest line, then every parameter as a
//! little-endian f32 in layout order. The manifest lists the layout so the
//! payload can be read without this crate.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Layout, NifmModel, Normalization, TensorInfo};
use crate::error::{Error, Result};
use crate::fsutil::{atomic_write, read_f32_payload, read_header_line, write_f32s};

pub const CKPT_MAGIC: &str = "nifm-ckpt";
pub const CKPT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    magic: String,
    version: u32,
    n: usize,
    d: usize,
    feat_dim: usize,
    levels: usize,
    resolutions: Vec<Vec<usize>>,
    nu_layers: usize,
    tau_layers: usize,
    #[serde(rename = "L")]
    depth: usize,
    sigma_nu: String,
    sigma_tau: String,
    tau_max: f64,
    normalization: Normalization,
    count: usize,
    layout: Vec<TensorInfo>,
}

pub fn write_checkpoint(model: &NifmModel, w: &mut dyn Write) -> Result<()> {
    let a = &model.arch;
    let manifest = Manifest {
        magic: CKPT_MAGIC.into(),
        version: CKPT_VERSION,
        n: a.n,
        d: a.width,
        feat_dim: a.feat_dim,
        levels: a.resolutions.len(),
        resolutions: a.resolutions.clone(),
        nu_layers: a.nu_layers,
        tau_layers: a.tau_layers,
        depth: a.depth,
        sigma_nu: "tanh".into(),
        sigma_tau: "swish".into(),
        tau_max: model.norm.tau_max,
        normalization: model.norm,
        count: model.params.len(),
        layout: model.layout.tensors.clone(),
    };
    let io = |e| Error::io("<checkpoint stream>", e);
    serde_json::to_writer(&mut *w, &manifest)?;
    w.write_all(b"\n").map_err(io)?;
    write_f32s(w, model.params.iter().copied()).map_err(io)
}

pub fn read_checkpoint(r: &mut dyn BufRead) -> Result<NifmModel> {
    let line = read_header_line(r)?;
    let raw: serde_json::Value =
        serde_json::from_str(&line).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let magic = raw.get("magic").and_then(|m| m.as_str()).unwrap_or_default();
    if magic != CKPT_MAGIC {
        return Err(Error::BadMagic {
            expected: CKPT_MAGIC,
            found: magic.to_string(),
        });
    }
    let version = raw.get("version").and_then(|v| v.as_u64());
    if version != Some(CKPT_VERSION as u64) {
        return Err(Error::VersionMismatch {
            expected: CKPT_VERSION,
            found: version.unwrap_or(0) as u32,
        });
    }
    let m: Manifest =
        serde_json::from_value(raw).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    if m.sigma_nu != "tanh" || m.sigma_tau != "swish" {
        return Err(Error::MalformedHeader(format!(
            "unsupported activations {}/{}",
            m.sigma_nu, m.sigma_tau
        )));
    }
    if m.levels != m.resolutions.len() || m.tau_max != m.normalization.tau_max {
        return Err(Error::MalformedHeader("manifest fields disagree".into()));
    }
    let arch = Architecture {
        n: m.n,
        width: m.d,
        feat_dim: m.feat_dim,
        resolutions: m.resolutions,
        nu_layers: m.nu_layers,
        tau_layers: m.tau_layers,
        depth: m.depth,
    };
    let mut model = NifmModel::zeros(arch, m.normalization)?;
    check_layout(&model.layout, &m.layout)?;
    if m.count != model.layout.total {
        return Err(Error::MalformedHeader(format!(
            "count {} does not match layout total {}",
            m.count, model.layout.total
        )));
    }
    model.params = read_f32_payload(r, m.count)?;
    Ok(model)
}

fn check_layout(expected: &Layout, found: &[TensorInfo]) -> Result<()> {
    if expected.tensors.len() != found.len() {
        return Err(Error::MalformedHeader(format!(
            "layout lists {} tensors, architecture has {}",
            found.len(),
            expected.tensors.len()
        )));
    }
    for (e, f) in expected.tensors.iter().zip(found) {
        if e.name != f.name {
            return Err(Error::MalformedHeader(format!(
                "tensor {:?} where {:?} was expected",
                f.name, e.name
            )));
        }
        if e.shape != f.shape || e.offset != f.offset {
            return Err(Error::ShapeMismatch {
                name: e.name.clone(),
                expected: e.shape.clone(),
                found: f.shape.clone(),
            });
        }
    }
    Ok(())
}

pub fn save_checkpoint(model: &NifmModel, path: &Path) -> Result<()> {
    atomic_write(path, |w| write_checkpoint(model, w))
}

pub fn load_checkpoint(path: &Path) -> Result<NifmModel> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&mut BufReader::new(f))
}
