//! Flow-visualization quantities computed from any flow-map provider: FTLE
//! fields, streaklines, normalized endpoint errors and error sweeps.

mod ftle;
mod image;

pub use ftle::{ftle, max_eigenvalue_sym};
pub use image::{
    emit_scalar_image, encode_pgm, read_pgm, ImageRange, PgmImage, ScalarGrid,
};

use std::fmt::Write as _;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{AnalyticField, Domain, VectorField};
use crate::model::{k_for_tau, NifmModel, StepPolicy};
use crate::oracle::{check_releases, integrate, reference_streakline, FlowQuery, IntegratorSpec, Polyline, Vertex};

/// Something that answers flow-map queries.
#[derive(Clone, Copy)]
pub enum FlowMapProvider<'a> {
    /// A trained model. Spans longer than `segment` (physical units; the
    /// model's `tau_max` when `None`) are split into equal chained segments,
    /// each composed of `policy` steps.
    Neural {
        model: &'a NifmModel,
        policy: StepPolicy,
        segment: Option<f64>,
    },
    /// Fixed-step reference integration.
    Oracle {
        field: &'a dyn VectorField,
        spec: IntegratorSpec,
    },
    /// Closed-form endpoints of an analytic field.
    Exact(&'a AnalyticField),
}

impl<'a> FlowMapProvider<'a> {
    pub fn neural(model: &'a NifmModel, policy: StepPolicy) -> Self {
        FlowMapProvider::Neural {
            model,
            policy,
            segment: None,
        }
    }

    pub fn oracle(field: &'a dyn VectorField, spec: IntegratorSpec) -> Self {
        FlowMapProvider::Oracle { field, spec }
    }

    /// Fails for analytic kinds without a closed-form flow map.
    pub fn exact(field: &'a AnalyticField) -> Result<Self> {
        let probe = field.domain.center();
        if field.kind.exact_flow_map(&probe, 0.0, 0.0).is_none() {
            return Err(Error::InvalidArgument(
                "field has no closed-form flow map".into(),
            ));
        }
        Ok(FlowMapProvider::Exact(field))
    }

    pub fn domain(&self) -> &Domain {
        match self {
            FlowMapProvider::Neural { model, .. } => model.domain(),
            FlowMapProvider::Oracle { field, .. } => field.domain(),
            FlowMapProvider::Exact(f) => &f.domain,
        }
    }

    pub fn dim(&self) -> usize {
        self.domain().n
    }

    pub fn name(&self) -> &'static str {
        match self {
            FlowMapProvider::Neural { .. } => "neural",
            FlowMapProvider::Oracle { .. } => "oracle",
            FlowMapProvider::Exact(_) => "exact",
        }
    }

    /// Total number of network evaluations a neural provider spends on
    /// `tau`; 0 for the other variants.
    pub fn neural_steps(&self, tau: f64) -> usize {
        let FlowMapProvider::Neural { model, policy, segment } = self else {
            return 0;
        };
        let seg = segment.unwrap_or(model.norm.tau_max);
        let pieces = ((tau.abs() / seg - 1e-9).ceil() as usize).max(1);
        pieces * k_for_tau(*policy, model.norm.units().to_grid(tau / pieces as f64))
    }

    /// Endpoints for a batch of queries, one row each.
    pub fn evaluate(&self, x: ArrayView2<f64>, t: &[f64], tau: &[f64]) -> Result<Array2<f64>> {
        let n = self.dim();
        if x.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.ncols(),
            });
        }
        if t.len() != x.nrows() || tau.len() != x.nrows() {
            return Err(Error::InvalidArgument(format!(
                "{} positions but {} start times and {} spans",
                x.nrows(),
                t.len(),
                tau.len()
            )));
        }
        match self {
            FlowMapProvider::Neural { model, .. } => {
                let k: Vec<usize> = tau.iter().map(|&s| self.neural_steps(s)).collect();
                Ok(model.multi_step_batch(x, t, tau, &k))
            }
            FlowMapProvider::Oracle { field, spec } => {
                let rows = (0..x.nrows())
                    .into_par_iter()
                    .map(|r| integrate(*field, &FlowQuery::new(x.row(r).to_vec(), t[r], tau[r]), spec))
                    .collect::<Result<Vec<_>>>()?;
                Ok(stack(rows, n))
            }
            FlowMapProvider::Exact(f) => {
                let rows = (0..x.nrows())
                    .map(|r| f.kind.exact_flow_map(x.row(r).as_slice().unwrap(), t[r], tau[r]).unwrap())
                    .collect();
                Ok(stack(rows, n))
            }
        }
    }

    pub fn evaluate_queries(&self, queries: &[FlowQuery]) -> Result<Array2<f64>> {
        let n = self.dim();
        if let Some(q) = queries.iter().find(|q| q.x.len() != n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: q.x.len(),
            });
        }
        let x = Array2::from_shape_fn((queries.len(), n), |(r, a)| queries[r].x[a]);
        let t: Vec<f64> = queries.iter().map(|q| q.t).collect();
        let tau: Vec<f64> = queries.iter().map(|q| q.tau).collect();
        self.evaluate(x.view(), &t, &tau)
    }

    pub fn answer(&self, q: &FlowQuery) -> Result<Vec<f64>> {
        Ok(self.evaluate_queries(std::slice::from_ref(q))?.row(0).to_vec())
    }
}

fn stack(rows: Vec<Vec<f64>>, n: usize) -> Array2<f64> {
    let count = rows.len();
    Array2::from_shape_vec((count, n), rows.concat()).unwrap()
}

/// Positions at `t_obs` of particles released from `seed` at `releases`,
/// ordered by release time. The neural variant answers all releases in one
/// batch; the oracle variant is [`reference_streakline`].
pub fn streaklines(provider: &FlowMapProvider, seed: &[f64], releases: &[f64], t_obs: f64) -> Result<Polyline> {
    if let FlowMapProvider::Oracle { field, spec } = provider {
        return reference_streakline(*field, seed, releases, t_obs, spec);
    }
    check_releases(releases, t_obs)?;
    let n = provider.dim();
    if seed.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: seed.len(),
        });
    }
    let mut order = releases.to_vec();
    order.sort_by(f64::total_cmp);
    let x = Array2::from_shape_fn((order.len(), n), |(_, a)| seed[a]);
    let tau: Vec<f64> = order.iter().map(|r| t_obs - r).collect();
    let end = provider.evaluate(x.view(), &order, &tau)?;
    let vertices = order
        .iter()
        .zip(end.outer_iter())
        .map(|(&t, y)| Vertex { x: y.to_vec(), t })
        .collect();
    Ok(Polyline { vertices })
}

/// `release_t,x,y[,z]`
pub fn streak_csv(line: &Polyline, n: usize) -> String {
    let mut out = String::from("release_t,x,y");
    if n == 3 {
        out.push_str(",z");
    }
    out.push('\n');
    for v in &line.vertices {
        let _ = write!(out, "{}", v.t);
        for c in &v.x {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// Endpoint error statistics for one batch of queries, normalized by the
/// spatial bounding-box diagonal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorRecord {
    /// Start time and span of the queries, or NaN when they differ.
    pub t0: f64,
    pub tau: f64,
    pub mean_err: f64,
    pub max_err: f64,
    pub n: usize,
    /// Time spent evaluating `provider`.
    pub wall_ms: f64,
}

fn common(values: impl Iterator<Item = f64>) -> f64 {
    let mut it = values;
    let first = it.next().unwrap_or(f64::NAN);
    if it.all(|v| v == first) {
        first
    } else {
        f64::NAN
    }
}

/// Mean and max of `‖pred − ref‖ / diag` over `queries`, with the diagonal of
/// the reference's spatial domain.
pub fn flow_map_error(
    provider: &FlowMapProvider,
    reference: &FlowMapProvider,
    queries: &[FlowQuery],
) -> Result<ErrorRecord> {
    if queries.is_empty() {
        return Err(Error::InvalidArgument("no queries to evaluate".into()));
    }
    let start = Instant::now();
    let pred = provider.evaluate_queries(queries)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let truth = reference.evaluate_queries(queries)?;
    let diag = reference.domain().diagonal();
    let errs: Vec<f64> = pred
        .outer_iter()
        .zip(truth.outer_iter())
        .map(|(p, r)| p.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() / diag)
        .collect();
    Ok(ErrorRecord {
        t0: common(queries.iter().map(|q| q.t)),
        tau: common(queries.iter().map(|q| q.tau)),
        mean_err: errs.iter().sum::<f64>() / errs.len() as f64,
        max_err: errs.iter().copied().fold(0.0, f64::max),
        n: errs.len(),
        wall_ms,
    })
}

/// Uniform random positions in `domain`, all starting at `t0` with span `tau`.
pub fn random_queries<R: Rng>(rng: &mut R, domain: &Domain, t0: f64, tau: f64, count: usize) -> Vec<FlowQuery> {
    (0..count)
        .map(|_| {
            let x: Vec<f64> = (0..domain.n)
                .map(|a| domain.lo[a] + rng.random::<f64>() * domain.extent(a))
                .collect();
            FlowQuery::new(x, t0, tau)
        })
        .collect()
}

/// One [`ErrorRecord`] per `(t0, tau)` cell, start times outermost, each on
/// `samples_per_cell` random seeds drawn from the reference domain.
pub fn evaluation_sweep(
    provider: &FlowMapProvider,
    reference: &FlowMapProvider,
    start_times: &[f64],
    spans: &[f64],
    samples_per_cell: usize,
    seed: u64,
) -> Result<Vec<ErrorRecord>> {
    if start_times.is_empty() || spans.is_empty() || samples_per_cell == 0 {
        return Err(Error::InvalidArgument(
            "sweep needs start times, spans and samples".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let domain = *reference.domain();
    let mut out = Vec::with_capacity(start_times.len() * spans.len());
    for &t0 in start_times {
        for &tau in spans {
            let queries = random_queries(&mut rng, &domain, t0, tau, samples_per_cell);
            out.push(flow_map_error(provider, reference, &queries)?);
        }
    }
    Ok(out)
}

/// `t0,tau,mean_err,max_err,n,wall_ms`. Without `timing` the wall-clock
/// column is written as 0 so reruns are byte-identical.
pub fn sweep_csv(records: &[ErrorRecord], timing: bool) -> String {
    let mut out = String::from("t0,tau,mean_err,max_err,n,wall_ms\n");
    for r in records {
        let ms = if timing { r.wall_ms } else { 0.0 };
        let _ = writeln!(out, "{},{},{:e},{:e},{},{ms:.3}", r.t0, r.tau, r.mean_err, r.max_err, r.n);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    /// `euler`, `rk4` or `nifm`.
    pub method: &'static str,
    /// Step size for the integrators, composition count for the model.
    pub param: f64,
    pub tau: f64,
    pub err: f64,
}

/// Mean normalized endpoint error against the closed-form flow map of `src`
/// for Euler and RK4 at each step size and, when given, for `model` composed
/// with each `k`. Start positions are drawn from the central half of the
/// domain, start times so the span stays inside the time range.
pub fn euler_rk4_model_comparison(
    src: &AnalyticField,
    model: Option<&NifmModel>,
    step_sizes: &[f64],
    ks: &[usize],
    taus: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<ComparisonRow>> {
    let exact = FlowMapProvider::exact(src)?;
    if samples == 0 {
        return Err(Error::InvalidArgument("comparison needs samples".into()));
    }
    let d = src.domain;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for &tau in taus {
        let top = (d.t_hi - tau.abs()).max(d.t_lo);
        let queries: Vec<FlowQuery> = (0..samples)
            .map(|_| {
                let x: Vec<f64> = (0..d.n)
                    .map(|a| d.lo[a] + (0.25 + 0.5 * rng.random::<f64>()) * d.extent(a))
                    .collect();
                FlowQuery::new(x, d.t_lo + rng.random::<f64>() * (top - d.t_lo), tau)
            })
            .collect();
        for (method, scheme) in [("euler", crate::oracle::Scheme::Euler), ("rk4", crate::oracle::Scheme::Rk4)] {
            for &h in step_sizes {
                let p = FlowMapProvider::oracle(src, IntegratorSpec::new(scheme, h)?);
                let e = flow_map_error(&p, &exact, &queries)?;
                rows.push(ComparisonRow { method, param: h, tau, err: e.mean_err });
            }
        }
        if let Some(m) = model {
            if m.dim() != d.n {
                return Err(Error::DimensionMismatch {
                    expected: d.n,
                    got: m.dim(),
                });
            }
            let x = Array2::from_shape_fn((samples, d.n), |(r, a)| queries[r].x[a]);
            let t: Vec<f64> = queries.iter().map(|q| q.t).collect();
            let truth = exact.evaluate_queries(&queries)?;
            for &k in ks {
                let pred = m.multi_step_batch(x.view(), &t, &vec![tau; samples], &vec![k; samples]);
                let err = (&pred - &truth)
                    .outer_iter()
                    .map(|r| r.dot(&r).sqrt())
                    .sum::<f64>()
                    / (samples as f64 * d.diagonal());
                rows.push(ComparisonRow { method: "nifm", param: k as f64, tau, err });
            }
        }
    }
    Ok(rows)
}

/// `method,param,tau,err`
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("method,param,tau,err\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{:e}", r.method, r.param, r.tau, r.err);
    }
    out
}

/// Least-squares slope of `ln err` against `ln param` for one method and
/// span; `None` with fewer than two positive errors.
pub fn convergence_slope(rows: &[ComparisonRow], method: &str, tau: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.method == method && r.tau == tau && r.err > 0.0)
        .map(|r| (r.param.ln(), r.err.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

#[cfg(test)]
mod tests;
