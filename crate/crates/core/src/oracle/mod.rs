//! Fixed-step Euler/RK4 reference integration.
//!
//! Sub-steps have length `h`, except the last one, which is shortened so every
//! integration lands exactly on `t + tau`. Negative spans integrate backwards.

mod samples;

pub use samples::{
    load_samples, read_samples, sample_flow_map_dataset, sample_query, save_samples,
    write_samples, FlowMapSample, FlowMapSampleSet, SAMPLES_MAGIC, SAMPLES_VERSION,
};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{GridUnits, VectorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub h: f64,
}

impl IntegratorSpec {
    pub fn new(scheme: Scheme, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
        }
        Ok(IntegratorSpec { scheme, h })
    }

    /// RK4 with half a temporal voxel per step.
    pub fn default_for(units: GridUnits) -> Self {
        IntegratorSpec {
            scheme: Scheme::Rk4,
            h: 0.5 * units.voxel,
        }
    }

    /// Number of sub-steps used for a span `tau`.
    pub fn steps_for(&self, tau: f64) -> usize {
        if tau == 0.0 {
            return 0;
        }
        let r = tau.abs() / self.h;
        // guard against r = 1000.0000000001 from rounding
        ((r - 1e-9).ceil() as usize).max(1)
    }
}

/// Start position, start time and signed time span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowQuery {
    pub x: Vec<f64>,
    pub t: f64,
    pub tau: f64,
}

impl FlowQuery {
    pub fn new(x: impl Into<Vec<f64>>, t: f64, tau: f64) -> Self {
        FlowQuery {
            x: x.into(),
            t,
            tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vertex {
    pub x: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Polyline {
    pub vertices: Vec<Vertex>,
}

impl Polyline {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Single-step integrator with scratch buffers sized for one dimension.
struct Stepper<'a, F: ?Sized> {
    field: &'a F,
    scheme: Scheme,
    k: [[f64; 3]; 4],
    tmp: [f64; 3],
    n: usize,
}

impl<'a, F: VectorField + ?Sized> Stepper<'a, F> {
    fn new(field: &'a F, scheme: Scheme) -> Self {
        Stepper {
            field,
            scheme,
            k: [[0.0; 3]; 4],
            tmp: [0.0; 3],
            n: field.dim(),
        }
    }

    fn step(&mut self, x: &mut [f64], t: f64, dt: f64) {
        let n = self.n;
        let f = self.field;
        match self.scheme {
            Scheme::Euler => {
                f.sample_into(x, t, &mut self.k[0][..n]);
                for i in 0..n {
                    x[i] += dt * self.k[0][i];
                }
            }
            Scheme::Rk4 => {
                let [k1, k2, k3, k4] = &mut self.k;
                let tmp = &mut self.tmp;
                f.sample_into(x, t, &mut k1[..n]);
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * dt * k1[i];
                }
                f.sample_into(&tmp[..n], t + 0.5 * dt, &mut k2[..n]);
                for i in 0..n {
                    tmp[i] = x[i] + 0.5 * dt * k2[i];
                }
                f.sample_into(&tmp[..n], t + 0.5 * dt, &mut k3[..n]);
                for i in 0..n {
                    tmp[i] = x[i] + dt * k3[i];
                }
                f.sample_into(&tmp[..n], t + dt, &mut k4[..n]);
                for i in 0..n {
                    x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
        }
    }
}

/// Runs the sub-steps of `q`, calling `visit(step_index, x, t)` after each.
fn advance<F, V>(field: &F, q: &FlowQuery, spec: &IntegratorSpec, mut visit: V) -> Result<Vec<f64>>
where
    F: VectorField + ?Sized,
    V: FnMut(usize, &[f64], f64),
{
    let n = field.dim();
    if q.x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.x.len(),
        });
    }
    if !q.tau.is_finite() || !q.t.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "query time {} / span {} must be finite",
            q.t, q.tau
        )));
    }
    let mut x = q.x.clone();
    let steps = spec.steps_for(q.tau);
    let dir = q.tau.signum();
    let t_end = q.t + q.tau;
    let mut stepper = Stepper::new(field, spec.scheme);
    for i in 0..steps {
        let t = q.t + dir * spec.h * i as f64;
        let dt = if i + 1 == steps { t_end - t } else { dir * spec.h };
        stepper.step(&mut x, t, dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState {
                t: t + dt,
                detail: format!("position {x:?} after step {i} from {:?}", q.x),
            });
        }
        let t_next = if i + 1 == steps { t_end } else { t + dt };
        visit(i, &x, t_next);
    }
    Ok(x)
}

/// Endpoint of the pathline through `q`.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    q: &FlowQuery,
    spec: &IntegratorSpec,
) -> Result<Vec<f64>> {
    advance(field, q, spec, |_, _, _| {})
}

/// Pathline vertices every `record_every` sub-steps, always including both
/// endpoints.
pub fn pathline<F: VectorField + ?Sized>(
    field: &F,
    q: &FlowQuery,
    spec: &IntegratorSpec,
    record_every: usize,
) -> Result<Polyline> {
    let every = record_every.max(1);
    let steps = spec.steps_for(q.tau);
    let mut vertices = vec![Vertex {
        x: q.x.clone(),
        t: q.t,
    }];
    advance(field, q, spec, |i, x, t| {
        if (i + 1) % every == 0 || i + 1 == steps {
            vertices.push(Vertex { x: x.to_vec(), t });
        }
    })?;
    Ok(Polyline { vertices })
}

/// Positions at `t_obs` of particles released from `seed` at each release
/// time, ordered by release time.
pub fn reference_streakline<F: VectorField + ?Sized>(
    field: &F,
    seed: &[f64],
    releases: &[f64],
    t_obs: f64,
    spec: &IntegratorSpec,
) -> Result<Polyline> {
    check_releases(releases, t_obs)?;
    let mut order: Vec<f64> = releases.to_vec();
    order.sort_by(f64::total_cmp);
    let vertices = order
        .into_iter()
        .map(|r| {
            let x = integrate(field, &FlowQuery::new(seed, r, t_obs - r), spec)?;
            Ok(Vertex { x, t: r })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Polyline { vertices })
}

pub(crate) fn check_releases(releases: &[f64], t_obs: f64) -> Result<()> {
    match releases.iter().find(|&&r| !(r <= t_obs)) {
        Some(r) => Err(Error::InvalidArgument(format!(
            "release time {r} is after observation time {t_obs}"
        ))),
        None => Ok(()),
    }
}
