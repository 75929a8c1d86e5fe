use std::f64::consts::PI;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::{Domain, GridUnits, VectorField};
use crate::error::{Error, Result};

/// Closed-form velocity fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AnalyticKind {
    /// Periodically forced pair of gyres on `[0,2]x[0,1]`.
    DoubleGyre { a: f64, eps: f64, omega: f64 },
    /// Solid-body rotation about the origin (about the z axis in 3D).
    RigidRotation { omega: f64 },
    /// Linear hyperbolic saddle `(λx, -λy[, 0])`.
    Saddle { lambda: f64 },
    Constant { c: Vec<f64> },
}

impl AnalyticKind {
    pub fn double_gyre() -> Self {
        AnalyticKind::DoubleGyre {
            a: 0.1,
            eps: 0.25,
            omega: 2.0 * PI / 10.0,
        }
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        match self {
            AnalyticKind::DoubleGyre { .. } if n != 2 => Err(Error::DimensionMismatch {
                expected: 2,
                got: n,
            }),
            AnalyticKind::Constant { c } if c.len() != n => Err(Error::DimensionMismatch {
                expected: n,
                got: c.len(),
            }),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64], t: f64, out: &mut [f64]) {
        match *self {
            AnalyticKind::DoubleGyre { a, eps, omega } => {
                let s = eps * (omega * t).sin();
                let b = 1.0 - 2.0 * s;
                let f = s * x[0] * x[0] + b * x[0];
                let dfdx = 2.0 * s * x[0] + b;
                let (sf, cf) = (PI * f).sin_cos();
                let (sy, cy) = (PI * x[1]).sin_cos();
                out[0] = -PI * a * sf * cy;
                out[1] = PI * a * cf * sy * dfdx;
            }
            AnalyticKind::RigidRotation { omega } => {
                out[0] = -omega * x[1];
                out[1] = omega * x[0];
                if out.len() == 3 {
                    out[2] = 0.0;
                }
            }
            AnalyticKind::Saddle { lambda } => {
                out[0] = lambda * x[0];
                out[1] = -lambda * x[1];
                if out.len() == 3 {
                    out[2] = 0.0;
                }
            }
            AnalyticKind::Constant { ref c } => out.copy_from_slice(c),
        }
    }

    /// Exact flow map for the kinds that have one in closed form.
    pub fn exact_flow_map(&self, x: &[f64], _t: f64, tau: f64) -> Option<Vec<f64>> {
        match *self {
            AnalyticKind::DoubleGyre { .. } => None,
            AnalyticKind::RigidRotation { omega } => {
                let (s, c) = (omega * tau).sin_cos();
                let mut y = x.to_vec();
                y[0] = c * x[0] - s * x[1];
                y[1] = s * x[0] + c * x[1];
                Some(y)
            }
            AnalyticKind::Saddle { lambda } => {
                let mut y = x.to_vec();
                y[0] = x[0] * (lambda * tau).exp();
                y[1] = x[1] * (-lambda * tau).exp();
                Some(y)
            }
            AnalyticKind::Constant { ref c } => {
                Some(x.iter().zip(c).map(|(xi, ci)| xi + tau * ci).collect())
            }
        }
    }
}

/// An analytic formula restricted to a domain, with a nominal temporal
/// resolution that defines grid units for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct AnalyticField {
    pub kind: AnalyticKind,
    pub domain: Domain,
    pub time_nodes: usize,
}

impl AnalyticField {
    pub fn new(kind: AnalyticKind, domain: Domain, time_nodes: usize) -> Result<Self> {
        kind.check_dim(domain.n)?;
        if time_nodes < 2 {
            return Err(Error::InvalidGrid("time_nodes must be at least 2".into()));
        }
        Ok(AnalyticField {
            kind,
            domain,
            time_nodes,
        })
    }

    /// Canonical double gyre on `[0,2]x[0,1]` over one forcing period.
    pub fn double_gyre(time_nodes: usize) -> Self {
        let domain = Domain::new(&[0.0, 0.0], &[2.0, 1.0], 0.0, 10.0).unwrap();
        AnalyticField::new(AnalyticKind::double_gyre(), domain, time_nodes).unwrap()
    }

    pub fn grid_units(&self) -> GridUnits {
        GridUnits::new(&self.domain, self.time_nodes)
    }
}

impl VectorField for AnalyticField {
    fn domain(&self) -> &Domain {
        &self.domain
    }

    fn sample_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        self.kind.eval(x, t, out);
    }
}
