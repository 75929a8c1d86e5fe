//! Multilinear interpolation stencils on regular node lattices.

/// Upper bound on lattice rank: time plus three spatial axes.
pub const MAX_RANK: usize = 4;
const MAX_CORNERS: usize = 1 << MAX_RANK;

/// Snap tolerance in lattice units. Coordinates this close to a node are
/// treated as exactly on it so stored values come back bit-exact.
const SNAP: f64 = 1e-9;

/// The `2^rank` corner nodes surrounding a query and their weights.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub nodes: [usize; MAX_CORNERS],
    pub weights: [f64; MAX_CORNERS],
    pub len: usize,
}

impl Stencil {
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.nodes[..self.len]
            .iter()
            .copied()
            .zip(self.weights[..self.len].iter().copied())
    }
}

/// Builds the stencil for `coords`, given in lattice units (node `i` sits at
/// coordinate `i`). Coordinates are clamped to `[0, dims[a]-1]`. Node indices
/// are row-major with the last axis fastest.
pub fn stencil(dims: &[usize], coords: &[f64]) -> Stencil {
    let rank = dims.len();
    debug_assert!(rank <= MAX_RANK && coords.len() == rank);
    let mut base = [0usize; MAX_RANK];
    let mut frac = [0.0f64; MAX_RANK];
    let mut strides = [0usize; MAX_RANK];
    let mut stride = 1;
    for a in (0..rank).rev() {
        strides[a] = stride;
        stride *= dims[a];
    }
    for a in 0..rank {
        let top = (dims[a] - 1) as f64;
        // NaN falls through to 0
        let mut c = if coords[a] > 0.0 { coords[a].min(top) } else { 0.0 };
        let r = c.round();
        if (c - r).abs() < SNAP {
            c = r;
        }
        let b = (c.floor() as usize).min(dims[a] - 2);
        base[a] = b;
        frac[a] = c - b as f64;
    }
    let len = 1 << rank;
    let mut s = Stencil {
        nodes: [0; MAX_CORNERS],
        weights: [0.0; MAX_CORNERS],
        len,
    };
    for corner in 0..len {
        let mut node = 0;
        let mut w = 1.0;
        for a in 0..rank {
            let hi = (corner >> (rank - 1 - a)) & 1 == 1;
            node += (base[a] + hi as usize) * strides[a];
            w *= if hi { frac[a] } else { 1.0 - frac[a] };
        }
        s.nodes[corner] = node;
        s.weights[corner] = w;
    }
    s
}

/// Maps `v` in `[lo, hi]` onto lattice coordinates of an axis with `nodes` nodes.
#[inline]
pub fn to_lattice(v: f64, lo: f64, hi: f64, nodes: usize) -> f64 {
    (v - lo) / (hi - lo) * (nodes - 1) as f64
}
