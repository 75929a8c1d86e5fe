use super::{Domain, VectorField};
use crate::error::{Error, Result};
use crate::lattice::{stencil, to_lattice, MAX_RANK};

/// Velocity samples on a regular space-time lattice.
///
/// `dims` is ordered `[t, x, y(, z)]`. `data` holds `n` components per node,
/// node-major in the same axis order (components fastest, then the last
/// spatial axis).
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedField {
    pub dims: Vec<usize>,
    pub domain: Domain,
    pub data: Vec<f32>,
}

impl GriddedField {
    pub fn new(dims: Vec<usize>, domain: Domain, data: Vec<f32>) -> Result<Self> {
        if dims.len() != domain.n + 1 {
            return Err(Error::InvalidGrid(format!(
                "{} axes given for a {}-dimensional domain (expected {})",
                dims.len(),
                domain.n,
                domain.n + 1
            )));
        }
        if let Some(d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidGrid(format!(
                "every axis needs at least 2 nodes, got {d}"
            )));
        }
        let expected = node_count(&dims) * domain.n;
        if data.len() != expected {
            return Err(Error::InvalidGrid(format!(
                "data length {} does not match dims {:?} x {} components = {expected}",
                data.len(),
                dims,
                domain.n
            )));
        }
        Ok(GriddedField { dims, domain, data })
    }

    pub fn node_count(&self) -> usize {
        node_count(&self.dims)
    }

    /// Physical time of temporal node `i`.
    pub fn node_time(&self, i: usize) -> f64 {
        let d = &self.domain;
        axis_coord(d.t_lo, d.t_hi, self.dims[0], i)
    }

    /// Physical coordinate of node `i` along spatial axis `axis`.
    pub fn node_position(&self, axis: usize, i: usize) -> f64 {
        let d = &self.domain;
        axis_coord(d.lo[axis], d.hi[axis], self.dims[axis + 1], i)
    }

    /// The stored vector at a multi-index `[it, ix, iy(, iz)]`.
    pub fn node(&self, index: &[usize]) -> &[f32] {
        let mut flat = 0;
        for (i, d) in index.iter().zip(&self.dims) {
            flat = flat * d + i;
        }
        let n = self.domain.n;
        &self.data[flat * n..(flat + 1) * n]
    }
}

pub(crate) fn node_count(dims: &[usize]) -> usize {
    dims.iter().product()
}

fn axis_coord(lo: f64, hi: f64, nodes: usize, i: usize) -> f64 {
    if i == nodes - 1 {
        hi
    } else {
        lo + (hi - lo) * i as f64 / (nodes - 1) as f64
    }
}

impl VectorField for GriddedField {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn sample_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        let d = &self.domain;
        let n = d.n;
        let mut coords = [0.0; MAX_RANK];
        coords[0] = to_lattice(t, d.t_lo, d.t_hi, self.dims[0]);
        for a in 0..n {
            coords[a + 1] = to_lattice(x[a], d.lo[a], d.hi[a], self.dims[a + 1]);
        }
        let s = stencil(&self.dims, &coords[..n + 1]);
        out[..n].fill(0.0);
        for (node, w) in s.iter() {
            let v = &self.data[node * n..node * n + n];
            for (o, &vi) in out.iter_mut().zip(v) {
                *o += w * vi as f64;
            }
        }
    }
}

/// Samples `src` at every node of a lattice with the given `[t, x, y(, z)]`
/// node counts spanning `src`'s domain.
pub fn rasterize<F: VectorField + ?Sized>(src: &F, dims: &[usize]) -> Result<GriddedField> {
    let domain = *src.domain();
    let n = domain.n;
    if dims.len() != n + 1 {
        return Err(Error::DimensionMismatch {
            expected: n + 1,
            got: dims.len(),
        });
    }
    if dims.iter().any(|&d| d < 2) {
        return Err(Error::InvalidGrid("every axis needs at least 2 nodes".into()));
    }
    let total = node_count(dims);
    let mut data = Vec::with_capacity(total * n);
    let mut index = vec![0usize; n + 1];
    let mut x = vec![0.0; n];
    let mut v = vec![0.0; n];
    for _ in 0..total {
        let t = axis_coord(domain.t_lo, domain.t_hi, dims[0], index[0]);
        for a in 0..n {
            x[a] = axis_coord(domain.lo[a], domain.hi[a], dims[a + 1], index[a + 1]);
        }
        src.sample_into(&x, t, &mut v);
        data.extend(v.iter().map(|&c| c as f32));
        for a in (0..=n).rev() {
            index[a] += 1;
            if index[a] < dims[a] {
                break;
            }
            index[a] = 0;
        }
    }
    GriddedField::new(dims.to_vec(), domain, data)
}
