use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned spatial box times a time interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct Domain {
    pub n: usize,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub t_lo: f64,
    pub t_hi: f64,
}

#[derive(Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
struct DomainRepr {
    lo: Vec<f64>,
    hi: Vec<f64>,
    t_lo: f64,
    t_hi: f64,
}

impl JsonSchema for Domain {
    fn schema_name() -> std::borrow::Cow<'static, str> {
        "Domain".into()
    }

    fn json_schema(g: &mut schemars::SchemaGenerator) -> schemars::Schema {
        DomainRepr::json_schema(g)
    }
}

impl TryFrom<DomainRepr> for Domain {
    type Error = Error;

    fn try_from(r: DomainRepr) -> Result<Self> {
        Domain::new(&r.lo, &r.hi, r.t_lo, r.t_hi)
    }
}

impl From<Domain> for DomainRepr {
    fn from(d: Domain) -> Self {
        DomainRepr {
            lo: d.lo().to_vec(),
            hi: d.hi().to_vec(),
            t_lo: d.t_lo,
            t_hi: d.t_hi,
        }
    }
}

impl Domain {
    pub fn new(lo: &[f64], hi: &[f64], t_lo: f64, t_hi: f64) -> Result<Self> {
        let n = lo.len();
        if !(2..=3).contains(&n) {
            return Err(Error::UnsupportedDimension(n));
        }
        if hi.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: hi.len(),
            });
        }
        let all_finite = lo.iter().chain(hi).chain([&t_lo, &t_hi]).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::InvalidDomain("bounds must be finite".into()));
        }
        if let Some(axis) = (0..n).find(|&i| lo[i] >= hi[i]) {
            return Err(Error::InvalidDomain(format!(
                "lo[{axis}]={} must be below hi[{axis}]={}",
                lo[axis], hi[axis]
            )));
        }
        if t_lo >= t_hi {
            return Err(Error::InvalidDomain(format!(
                "t_lo={t_lo} must be below t_hi={t_hi}"
            )));
        }
        let mut l = [0.0; 3];
        let mut h = [0.0; 3];
        l[..n].copy_from_slice(lo);
        h[..n].copy_from_slice(hi);
        Ok(Domain {
            n,
            lo: l,
            hi: h,
            t_lo,
            t_hi,
        })
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo[..self.n]
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi[..self.n]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn duration(&self) -> f64 {
        self.t_hi - self.t_lo
    }

    /// Length of the spatial bounding-box diagonal.
    pub fn diagonal(&self) -> f64 {
        (0..self.n)
            .map(|i| self.extent(i).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn center(&self) -> Vec<f64> {
        (0..self.n).map(|i| 0.5 * (self.lo[i] + self.hi[i])).collect()
    }

    pub fn clamp_position(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lo[i], self.hi[i]);
        }
    }

    pub fn clamp_time(&self, t: f64) -> f64 {
        t.clamp(self.t_lo, self.t_hi)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &v)| v >= self.lo[i] && v <= self.hi[i])
    }
}

/// Conversion between physical time spans and counts of temporal voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridUnits {
    /// Physical duration of one temporal voxel.
    pub voxel: f64,
}

impl GridUnits {
    pub fn new(domain: &Domain, time_nodes: usize) -> Self {
        let cells = time_nodes.max(2) - 1;
        GridUnits {
            voxel: domain.duration() / cells as f64,
        }
    }

    pub fn to_grid(&self, tau: f64) -> f64 {
        tau.abs() / self.voxel
    }

    pub fn to_physical(&self, tau_g: f64) -> f64 {
        tau_g * self.voxel
    }
}
