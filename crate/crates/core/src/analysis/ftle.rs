use ndarray::Array2;

use super::{FlowMapProvider, ScalarGrid};
use crate::error::{Error, Result};

const LAMBDA_FLOOR: f64 = 1.0 + 1e-12;

/// Largest eigenvalue of a symmetric 2×2 or 3×3 matrix given row-major.
pub fn max_eigenvalue_sym(c: &[f64], n: usize) -> f64 {
    match n {
        2 => {
            let (a, b, d) = (c[0], c[1], c[3]);
            let half = 0.5 * (a - d);
            0.5 * (a + d) + (half * half + b * b).sqrt()
        }
        3 => {
            let at = |i: usize, j: usize| c[3 * i + j];
            let p1 = at(0, 1).powi(2) + at(0, 2).powi(2) + at(1, 2).powi(2);
            let q = (at(0, 0) + at(1, 1) + at(2, 2)) / 3.0;
            if p1 == 0.0 {
                return at(0, 0).max(at(1, 1)).max(at(2, 2));
            }
            let p2 = (at(0, 0) - q).powi(2) + (at(1, 1) - q).powi(2) + (at(2, 2) - q).powi(2) + 2.0 * p1;
            let p = (p2 / 6.0).sqrt();
            let b = |i: usize, j: usize| (at(i, j) - if i == j { q } else { 0.0 }) / p;
            let det = b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1))
                - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
                + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0));
            let phi = (0.5 * det).clamp(-1.0, 1.0).acos() / 3.0;
            q + 2.0 * p * phi.cos()
        }
        _ => panic!("max_eigenvalue_sym supports 2x2 and 3x3"),
    }
}

/// Finite-time Lyapunov exponent `ln √λ_max(JᵀJ) / |τ|` on a node lattice
/// spanning the provider's spatial domain. `J` is taken by central
/// differences of seeds offset by `±h_fd` along each axis; `h_fd` defaults to
/// half the smallest output cell.
pub fn ftle(
    provider: &FlowMapProvider,
    t0: f64,
    tau: f64,
    dims: &[usize],
    h_fd: Option<f64>,
) -> Result<ScalarGrid> {
    if tau == 0.0 || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("FTLE needs a finite nonzero span, got {tau}")));
    }
    let d = *provider.domain();
    let n = d.n;
    if dims.len() != n || dims.iter().any(|&k| k < 2) {
        return Err(Error::InvalidArgument(format!(
            "FTLE output dims {dims:?} need {n} axes of at least 2 nodes"
        )));
    }
    let cell = (0..n)
        .map(|a| d.extent(a) / (dims[a] - 1) as f64)
        .fold(f64::INFINITY, f64::min);
    let h = h_fd.unwrap_or(0.5 * cell);
    if !(h > 0.0 && h <= cell * (1.0 + 1e-12)) {
        return Err(Error::InvalidArgument(format!(
            "h_fd {h} must lie in (0, {cell}] (one output cell)"
        )));
    }

    let nodes: usize = dims.iter().product();
    let per = 2 * n;
    let mut x = Array2::zeros((nodes * per, n));
    for node in 0..nodes {
        let mut rest = node;
        let mut center = [0.0; 3];
        for a in 0..n {
            let i = rest % dims[a];
            rest /= dims[a];
            center[a] = d.lo[a] + d.extent(a) * i as f64 / (dims[a] - 1) as f64;
        }
        for a in 0..n {
            for (s, sign) in [-1.0, 1.0].into_iter().enumerate() {
                let mut row = x.row_mut(node * per + 2 * a + s);
                for b in 0..n {
                    row[b] = center[b];
                }
                row[a] += sign * h;
            }
        }
    }
    let t = vec![t0; nodes * per];
    let spans = vec![tau; nodes * per];
    let y = provider.evaluate(x.view(), &t, &spans)?;

    let mut values = Vec::with_capacity(nodes);
    let mut jac = [0.0; 9];
    let mut cg = [0.0; 9];
    for node in 0..nodes {
        let base = node * per;
        // jac[i * n + a] = ∂y_i / ∂x_a
        for a in 0..n {
            let lo = y.row(base + 2 * a);
            let hi = y.row(base + 2 * a + 1);
            for i in 0..n {
                jac[i * n + a] = (hi[i] - lo[i]) / (2.0 * h);
            }
        }
        for a in 0..n {
            for b in 0..n {
                cg[a * n + b] = (0..n).map(|i| jac[i * n + a] * jac[i * n + b]).sum();
            }
        }
        let lambda = max_eigenvalue_sym(&cg[..n * n], n).max(LAMBDA_FLOOR);
        values.push((0.5 * lambda.ln() / tau.abs()) as f32);
    }
    ScalarGrid::new(dims.to_vec(), d.lo().to_vec(), d.hi().to_vec(), values)
}
