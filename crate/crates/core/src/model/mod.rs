//! The neural flow map.
//!
//! Two feature-grid encoders (`f_nu`, `f_tau`) feed a stack of `τ`-gated
//! residual blocks. Every gate is `tanh(τ m_l)` and no layer carries a bias, so
//! `Φ(x, t, 0) = x` holds exactly for any parameters, and the `τ`-derivative
//! at zero reduces to `W_out (m0 ⊙ f_nu(x, t))`, independent of `f_tau` and of
//! the residual weights.

mod activation;
mod checkpoint;
mod init;
mod layout;
pub(crate) mod net;

pub use activation::{sigmoid, swish};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CKPT_MAGIC, CKPT_VERSION};
pub use init::{grid_ladder, init_params, solve_resolutions, InitConfig};
pub use layout::{EncoderIds, Group, Layout, TensorInfo};

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Domain, GridUnits};
use crate::oracle::FlowQuery;
use net::Weights;

/// Rows per evaluation chunk. Fixed so results do not depend on threading.
pub(crate) const CHUNK_ROWS: usize = 512;

/// Shape hyperparameters of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    /// Spatial dimension.
    pub n: usize,
    /// Latent width `d`.
    pub width: usize,
    /// Features stored per grid node.
    pub feat_dim: usize,
    /// Per-level node counts, `[t, x, y(, z)]` each.
    pub resolutions: Vec<Vec<usize>>,
    /// Dense layers in `f_nu` (Swish between consecutive layers).
    pub nu_layers: usize,
    /// Dense layers in `f_tau`.
    pub tau_layers: usize,
    /// `L`: number of gate vectors; `L - 1` residual blocks plus the output
    /// projection.
    pub depth: usize,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.n) {
            return Err(Error::UnsupportedDimension(self.n));
        }
        if self.width == 0 || self.feat_dim == 0 {
            return Err(Error::Config("width and feat_dim must be positive".into()));
        }
        if self.resolutions.is_empty() {
            return Err(Error::Config("at least one grid level is required".into()));
        }
        for r in &self.resolutions {
            if r.len() != self.n + 1 || r.iter().any(|&v| v < 2) {
                return Err(Error::Config(format!(
                    "grid resolution {r:?} needs {} axes of at least 2 nodes",
                    self.n + 1
                )));
            }
        }
        if self.nu_layers == 0 || self.tau_layers == 0 {
            return Err(Error::Config("encoders need at least one dense layer".into()));
        }
        if self.depth < 2 {
            return Err(Error::Config("depth L must be at least 2".into()));
        }
        Ok(())
    }
}

/// Physical-unit bookkeeping: the domain used to place grid nodes and scale
/// outputs, the span that maps to a normalized `τ` of one, and the temporal
/// voxel size that defines grid units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Normalization {
    pub domain: Domain,
    pub tau_max: f64,
    pub voxel: f64,
}

impl Normalization {
    pub fn units(&self) -> GridUnits {
        GridUnits { voxel: self.voxel }
    }
}

/// How many composed steps to take for a span measured in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    /// `⌈√τ_g⌉`
    #[default]
    Sqrt,
    /// `⌈τ_g⌉`
    Full,
    /// `⌈ln(1 + τ_g)⌉`
    Log,
    Single,
}

impl StepPolicy {
    pub const ALL: [StepPolicy; 4] = [
        StepPolicy::Sqrt,
        StepPolicy::Full,
        StepPolicy::Log,
        StepPolicy::Single,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StepPolicy::Sqrt => "sqrt",
            StepPolicy::Full => "full",
            StepPolicy::Log => "log",
            StepPolicy::Single => "single",
        }
    }
}

/// Number of composition steps for a span of `tau_g` grid units; at least 1.
pub fn k_for_tau(policy: StepPolicy, tau_g: f64) -> usize {
    let tau_g = tau_g.abs();
    let k = match policy {
        StepPolicy::Sqrt => tau_g.sqrt().ceil(),
        StepPolicy::Full => tau_g.ceil(),
        StepPolicy::Log => tau_g.ln_1p().ceil(),
        StepPolicy::Single => 1.0,
    };
    (k as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NifmModel {
    pub arch: Architecture,
    pub norm: Normalization,
    pub(crate) layout: Layout,
    /// All trainable values, laid out per [`Layout`].
    pub params: Vec<f32>,
}

impl NifmModel {
    /// A model with every parameter zero.
    pub fn zeros(arch: Architecture, norm: Normalization) -> Result<Self> {
        arch.validate()?;
        if norm.domain.n != arch.n {
            return Err(Error::DimensionMismatch {
                expected: arch.n,
                got: norm.domain.n,
            });
        }
        if !(norm.tau_max > 0.0 && norm.voxel > 0.0) {
            return Err(Error::Config("tau_max and voxel must be positive".into()));
        }
        let layout = Layout::new(&arch);
        let params = vec![0.0; layout.total];
        Ok(NifmModel {
            arch,
            norm,
            layout,
            params,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn dim(&self) -> usize {
        self.arch.n
    }

    pub fn domain(&self) -> &Domain {
        &self.norm.domain
    }

    pub fn tensor(&self, name: &str) -> Option<&[f32]> {
        self.layout.find(name).map(|t| &self.params[t.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f32]> {
        let range = self.layout.find(name)?.range();
        Some(&mut self.params[range])
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.n {
            return Err(Error::DimensionMismatch {
                expected: self.arch.n,
                got: x.len(),
            });
        }
        Ok(())
    }

    fn row(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_dim(x)?;
        Ok(Array2::from_shape_vec((1, x.len()), x.to_vec()).unwrap())
    }

    /// `Φ(x, t, τ)` for one query.
    pub fn forward(&self, q: &FlowQuery) -> Result<Vec<f64>> {
        let x = self.row(&q.x)?;
        let w = Weights::new(self);
        Ok(self.flow_rows(&w, x.view(), &[q.t], &[q.tau]).into_raw_vec_and_offset().0)
    }

    /// Closed-form `∂Φ/∂τ` at `τ = 0`, in physical velocity units.
    pub fn instantaneous_velocity(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let xr = self.row(x)?;
        let w = Weights::new(self);
        Ok(self.velocity_rows(&w, xr.view(), &[t]).into_raw_vec_and_offset().0)
    }

    /// Exact `∂Φ/∂τ` at `(x, t, τ)` by forward-mode propagation.
    pub fn tau_derivative(&self, q: &FlowQuery) -> Result<Vec<f64>> {
        let x = self.row(&q.x)?;
        let w = Weights::new(self);
        let (_, d, _) = self.flow_dual(&w, x.view(), &[q.t], &[q.tau]);
        Ok(d.into_raw_vec_and_offset().0)
    }

    /// `k` composed evaluations of span `τ/k`, clamping intermediate
    /// positions to the domain.
    pub fn forward_multi_step(&self, q: &FlowQuery, k: usize) -> Result<Vec<f64>> {
        let x = self.row(&q.x)?;
        Ok(self
            .multi_step_batch(x.view(), &[q.t], &[q.tau], &[k])
            .into_raw_vec_and_offset()
            .0)
    }

    /// Batched `Φ`. `x` has one row per query.
    pub fn forward_batch(&self, x: ArrayView2<f64>, t: &[f64], tau: &[f64]) -> Array2<f64> {
        let w = Weights::new(self);
        self.chunked(x, |xs, r| self.flow_rows(&w, xs, &t[r.clone()], &tau[r]))
    }

    pub fn velocity_batch(&self, x: ArrayView2<f64>, t: &[f64]) -> Array2<f64> {
        let w = Weights::new(self);
        self.chunked(x, |xs, r| self.velocity_rows(&w, xs, &t[r]))
    }

    pub fn tau_derivative_batch(&self, x: ArrayView2<f64>, t: &[f64], tau: &[f64]) -> Array2<f64> {
        let w = Weights::new(self);
        self.chunked(x, |xs, r| self.flow_dual(&w, xs, &t[r.clone()], &tau[r]).1)
    }

    /// Batched composition with a per-row step count.
    pub fn multi_step_batch(
        &self,
        x: ArrayView2<f64>,
        t: &[f64],
        tau: &[f64],
        k: &[usize],
    ) -> Array2<f64> {
        let w = Weights::new(self);
        self.chunked(x, |xs, r| self.compose_rows(&w, xs, &t[r.clone()], &tau[r.clone()], &k[r]))
    }

    pub(crate) fn compose_rows(
        &self,
        w: &Weights,
        x: ArrayView2<f64>,
        t: &[f64],
        tau: &[f64],
        k: &[usize],
    ) -> Array2<f64> {
        let mut pos = x.to_owned();
        let mut time = t.to_vec();
        let steps: Vec<f64> = tau.iter().zip(k).map(|(&s, &k)| s / k.max(1) as f64).collect();
        let kmax = k.iter().copied().max().unwrap_or(1).max(1);
        let dom = self.norm.domain;
        for j in 0..kmax {
            let active: Vec<usize> = (0..k.len()).filter(|&r| k[r].max(1) > j).collect();
            if active.is_empty() {
                break;
            }
            let xs = pos.select(Axis(0), &active);
            let ts: Vec<f64> = active.iter().map(|&r| time[r]).collect();
            let ss: Vec<f64> = active.iter().map(|&r| steps[r]).collect();
            let next = self.flow_rows(w, xs.view(), &ts, &ss);
            for (i, &r) in active.iter().enumerate() {
                let mut row = pos.row_mut(r);
                row.assign(&next.row(i));
                if j + 1 < k[r].max(1) {
                    dom.clamp_position(row.as_slice_mut().unwrap());
                }
                time[r] += steps[r];
            }
        }
        pos
    }

    /// Splits rows into fixed chunks, evaluates them (in parallel when a pool
    /// is available), and stacks the results in order.
    fn chunked<F>(&self, x: ArrayView2<f64>, f: F) -> Array2<f64>
    where
        F: Fn(ArrayView2<f64>, std::ops::Range<usize>) -> Array2<f64> + Sync,
    {
        let rows = x.nrows();
        if rows <= CHUNK_ROWS {
            return f(x, 0..rows);
        }
        let parts: Vec<Array2<f64>> = (0..rows.div_ceil(CHUNK_ROWS))
            .into_par_iter()
            .map(|c| {
                let r = c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(rows);
                f(x.slice(ndarray::s![r.clone(), ..]), r)
            })
            .collect();
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(0), &views).unwrap()
    }
}
