//! Grid sizing and parameter initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{Architecture, Layout, NifmModel, Normalization};
use crate::error::{Error, Result};

/// Shape settings from which an [`Architecture`] is derived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct InitConfig {
    pub width: usize,
    pub feat_dim: usize,
    pub levels: usize,
    /// Per-level resolution growth factor.
    pub scale: f64,
    pub nu_layers: usize,
    pub tau_layers: usize,
    pub depth: usize,
    /// Coarsest-level node counts `[t, x, y(, z)]`. When absent the base is
    /// solved from `compression_ratio`.
    pub base_res: Option<Vec<usize>>,
    /// Field float count divided by model parameter count.
    pub compression_ratio: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        InitConfig {
            width: 64,
            feat_dim: 8,
            levels: 4,
            scale: 1.65,
            nu_layers: 2,
            tau_layers: 1,
            depth: 4,
            base_res: None,
            compression_ratio: 10.0,
        }
    }
}

impl InitConfig {
    fn arch(&self, n: usize, resolutions: Vec<Vec<usize>>) -> Architecture {
        Architecture {
            n,
            width: self.width,
            feat_dim: self.feat_dim,
            resolutions,
            nu_layers: self.nu_layers,
            tau_layers: self.tau_layers,
            depth: self.depth,
        }
    }

    /// Resolves grid resolutions for a field with node counts `field_dims`
    /// (`[t, x, y(, z)]`, `n` velocity components per node).
    pub fn architecture(&self, field_dims: &[usize]) -> Result<Architecture> {
        let n = field_dims.len().saturating_sub(1);
        let resolutions = match &self.base_res {
            Some(base) => {
                if base.len() != field_dims.len() {
                    return Err(Error::Config(format!(
                        "base_res {base:?} needs {} axes",
                        field_dims.len()
                    )));
                }
                grid_ladder(base, self.scale, self.levels)
            }
            None => solve_resolutions(field_dims, self)?,
        };
        let arch = self.arch(n, resolutions);
        arch.validate()?;
        Ok(arch)
    }
}

/// `res_l = ⌈res_0 · s^l⌉` per axis for `l = 0 .. levels-1`.
pub fn grid_ladder(base: &[usize], scale: f64, levels: usize) -> Vec<Vec<usize>> {
    (0..levels)
        .map(|l| {
            let f = scale.powi(l as i32);
            base.iter()
                .map(|&r| ((r as f64 * f) - 1e-9).ceil().max(r as f64) as usize)
                .collect()
        })
        .collect()
}

fn base_for(alpha: f64, field_dims: &[usize]) -> Vec<usize> {
    field_dims
        .iter()
        .map(|&d| ((alpha * d as f64).ceil() as usize).max(2))
        .collect()
}

/// Chooses per-level resolutions so the total parameter count lands as close
/// as possible to `field floats / compression_ratio`. The base resolution is
/// `max(2, ⌈α · dims⌉)` per axis, with `α` found by bisection.
pub fn solve_resolutions(field_dims: &[usize], cfg: &InitConfig) -> Result<Vec<Vec<usize>>> {
    let n = field_dims.len().saturating_sub(1);
    if !(2..=3).contains(&n) {
        return Err(Error::UnsupportedDimension(n));
    }
    if !(cfg.compression_ratio > 0.0) {
        return Err(Error::Config("compression_ratio must be positive".into()));
    }
    let floats = field_dims.iter().product::<usize>() as f64 * n as f64;
    let target = floats / cfg.compression_ratio;
    let count = |alpha: f64| {
        let res = grid_ladder(&base_for(alpha, field_dims), cfg.scale, cfg.levels);
        Layout::new(&cfg.arch(n, res)).total as f64
    };
    let smallest = count(0.0);
    if smallest > target {
        return Err(Error::Infeasible(format!(
            "ratio {} allows {target:.0} parameters but the smallest grids already need {smallest:.0}",
            cfg.compression_ratio
        )));
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while count(hi) <= target {
        hi *= 2.0;
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if count(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = if (count(hi) - target).abs() < (target - count(lo)).abs() {
        hi
    } else {
        lo
    };
    Ok(grid_ladder(&base_for(alpha, field_dims), cfg.scale, cfg.levels))
}

/// Fresh model: grid features uniform in `±1e-4`, dense matrices uniform with
/// variance `1/fan_in`, gate vectors one. The tensors draw from one ChaCha
/// stream in layout order.
pub fn init_params(arch: Architecture, norm: Normalization, seed: u64) -> Result<NifmModel> {
    let mut model = NifmModel::zeros(arch, norm)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layout = model.layout.clone();
    for (id, info) in layout.tensors.iter().enumerate() {
        let values = &mut model.params[info.range()];
        if layout.is_grid(id) {
            values
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-1e-4..1e-4));
        } else if info.shape.len() == 2 {
            let bound = (3.0 / info.shape[1] as f64).sqrt() as f32;
            values
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-bound..bound));
        } else {
            values.fill(1.0);
        }
    }
    Ok(model)
}
