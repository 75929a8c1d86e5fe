//! Time-varying vector fields.
//!
//! Every consumer (the reference integrator, the trainer, the analyses) goes
//! through [`VectorField::sample_into`], so analytic formulas and gridded data
//! are interchangeable. Gridded sampling clamps out-of-domain queries to the
//! boundary; analytic formulas are evaluated as written everywhere.

mod analytic;
mod domain;
mod gridded;
mod io;

pub use analytic::{AnalyticField, AnalyticKind};
pub use domain::{Domain, GridUnits};
pub use gridded::{rasterize, GriddedField};
pub use io::{load_grid, read_grid, save_grid, write_grid, GRID_MAGIC, GRID_VERSION};

use crate::error::{Error, Result};

/// Uniform sampling interface over analytic and gridded fields.
pub trait VectorField: Sync {
    fn domain(&self) -> &Domain;

    /// Writes the velocity at `(x, t)` into `out`. Both slices must have the
    /// domain's spatial dimension; callers that cannot guarantee this should use
    /// [`VectorField::sample`].
    fn sample_into(&self, x: &[f64], t: f64, out: &mut [f64]);

    fn dim(&self) -> usize {
        self.domain().n
    }

    fn sample(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.len(),
            });
        }
        let mut out = vec![0.0; n];
        self.sample_into(x, t, &mut out);
        Ok(out)
    }
}

/// A field that is either a closed-form formula or gridded data.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorFieldSource {
    Analytic(AnalyticField),
    Gridded(GriddedField),
}

impl VectorFieldSource {
    /// Conversion between physical time spans and temporal voxel counts.
    pub fn grid_units(&self) -> GridUnits {
        match self {
            VectorFieldSource::Analytic(a) => a.grid_units(),
            VectorFieldSource::Gridded(g) => GridUnits::new(&g.domain, g.dims[0]),
        }
    }

    pub fn as_analytic(&self) -> Option<&AnalyticField> {
        match self {
            VectorFieldSource::Analytic(a) => Some(a),
            VectorFieldSource::Gridded(_) => None,
        }
    }

    /// Closed-form flow map endpoint, when the source has one.
    pub fn exact_flow_map(&self, x: &[f64], t: f64, tau: f64) -> Option<Vec<f64>> {
        self.as_analytic()
            .and_then(|a| a.kind.exact_flow_map(x, t, tau))
    }
}

impl VectorField for VectorFieldSource {
    fn domain(&self) -> &Domain {
        match self {
            VectorFieldSource::Analytic(a) => &a.domain,
            VectorFieldSource::Gridded(g) => &g.domain,
        }
    }

    fn sample_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match self {
            VectorFieldSource::Analytic(a) => a.sample_into(x, t, out),
            VectorFieldSource::Gridded(g) => g.sample_into(x, t, out),
        }
    }
}

impl From<AnalyticField> for VectorFieldSource {
    fn from(a: AnalyticField) -> Self {
        VectorFieldSource::Analytic(a)
    }
}

impl From<GriddedField> for VectorFieldSource {
    fn from(g: GriddedField) -> Self {
        VectorFieldSource::Gridded(g)
    }
}
