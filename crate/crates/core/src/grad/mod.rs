//! Training objectives and their parameter gradients.
//!
//! All three losses are the batch mean of an unsquared Euclidean residual
//! norm. Where a residual is exactly zero its gradient contribution is zero.
//! Gradients are accumulated over fixed-size row chunks and summed in chunk
//! order, so the result is identical for any number of worker threads.

mod check;

pub use check::{check_gradients, check_stage_losses, toy_model, GradCheckRow};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::net::Weights;
use crate::model::{k_for_tau, Group, Layout, NifmModel, StepPolicy, CHUNK_ROWS};

/// Positions, start times and field velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityBatch {
    pub x: Array2<f64>,
    pub t: Vec<f64>,
    pub v: Array2<f64>,
}

/// Positions, start times and spans.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanBatch {
    pub x: Array2<f64>,
    pub t: Vec<f64>,
    pub tau: Vec<f64>,
}

/// A span batch with a constant `∂Φ/∂τ` target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetBatch {
    pub span: SpanBatch,
    pub target: Array2<f64>,
}

fn check_rows(what: &str, x: &Array2<f64>, others: &[usize]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::InvalidArgument(format!("{what} batch is empty")));
    }
    if let Some(&bad) = others.iter().find(|&&r| r != x.nrows()) {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            got: bad,
        });
    }
    Ok(())
}

impl VelocityBatch {
    pub fn new(x: Array2<f64>, t: Vec<f64>, v: Array2<f64>) -> Result<Self> {
        check_rows("velocity", &x, &[t.len(), v.nrows()])?;
        if v.ncols() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: v.ncols(),
            });
        }
        Ok(VelocityBatch { x, t, v })
    }
}

impl SpanBatch {
    pub fn new(x: Array2<f64>, t: Vec<f64>, tau: Vec<f64>) -> Result<Self> {
        check_rows("span", &x, &[t.len(), tau.len()])?;
        Ok(SpanBatch { x, t, tau })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

impl TargetBatch {
    pub fn new(span: SpanBatch, target: Array2<f64>) -> Result<Self> {
        check_rows("target", &span.x, &[target.nrows()])?;
        if target.ncols() != span.x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: span.x.ncols(),
                got: target.ncols(),
            });
        }
        Ok(TargetBatch { span, target })
    }
}

/// Which parameters an optimization stage updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageMask {
    /// Only the closed-form velocity network: `f_nu`, `m0`, `W_out`.
    Stage1,
    /// Every parameter; the velocity set is fine-tuned at its own rate.
    Stage2,
}

impl StageMask {
    pub fn includes(self, group: Group) -> bool {
        match self {
            StageMask::Stage1 => group == Group::Velocity,
            StageMask::Stage2 => true,
        }
    }

    /// Whether tensors of `group` use the reduced fine-tuning rate.
    pub fn is_finetune(self, group: Group) -> bool {
        self == StageMask::Stage2 && group == Group::Velocity
    }
}

/// The objective to differentiate.
#[derive(Debug, Clone, Copy)]
pub enum LossKind<'a> {
    Stage1(&'a VelocityBatch),
    Stage2(&'a SpanBatch, StepPolicy),
    Supervised(&'a TargetBatch),
}

/// Gradient for every parameter, in the model's flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradients {
    pub values: Vec<f64>,
    layout: Layout,
}

impl ParamGradients {
    pub fn zeros(model: &NifmModel) -> Self {
        ParamGradients {
            values: vec![0.0; model.layout().total],
            layout: model.layout().clone(),
        }
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.layout.find(name).map(|t| &self.values[t.range()])
    }

    /// `(name, gradient)` per tensor in layout order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.layout
            .tensors
            .iter()
            .map(|t| (t.name.as_str(), &self.values[t.range()]))
    }

    fn apply_mask(&mut self, mask: StageMask) {
        for t in &self.layout.tensors {
            if !mask.includes(t.group()) {
                self.values[t.range()].fill(0.0);
            }
        }
    }

    fn check_finite(&self) -> Result<()> {
        match self.iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
            Some((name, _)) => Err(Error::NonFiniteTensor(name.to_string())),
            None => Ok(()),
        }
    }
}

/// Row norms; replaces each row with its adjoint `r / (‖r‖ B)`.
fn norm_residual(r: &mut Array2<f64>, batch: usize) -> Vec<f64> {
    let mut norms = Vec::with_capacity(r.nrows());
    for mut row in r.outer_iter_mut() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        norms.push(norm);
        if norm > 0.0 {
            row.mapv_inplace(|v| v / (norm * batch as f64));
        } else {
            row.fill(0.0);
        }
    }
    norms
}

fn mean_norm(r: &Array2<f64>) -> f64 {
    let sum: f64 = r
        .outer_iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum();
    sum / r.nrows() as f64
}

fn chunks(rows: usize) -> Vec<std::ops::Range<usize>> {
    (0..rows.div_ceil(CHUNK_ROWS))
        .map(|c| c * CHUNK_ROWS..((c + 1) * CHUNK_ROWS).min(rows))
        .collect()
}

fn rows<'a>(a: &'a Array2<f64>, r: &std::ops::Range<usize>) -> ArrayView2<'a, f64> {
    a.slice(ndarray::s![r.clone(), ..])
}

/// Mean `‖v̂(x,t) − v‖` over the batch.
pub fn loss_stage1(model: &NifmModel, batch: &VelocityBatch) -> f64 {
    let pred = model.velocity_batch(batch.x.view(), &batch.t);
    mean_norm(&(pred - &batch.v))
}

/// The frozen stage-2 right-hand side: the model's own instantaneous
/// velocity at its composed endpoint, at time `t + τ`.
pub fn frozen_targets(model: &NifmModel, batch: &SpanBatch, policy: StepPolicy) -> Array2<f64> {
    let units = model.norm.units();
    let k: Vec<usize> = batch
        .tau
        .iter()
        .map(|&s| k_for_tau(policy, units.to_grid(s)))
        .collect();
    let end = model.multi_step_batch(batch.x.view(), &batch.t, &batch.tau, &k);
    let t_end: Vec<f64> = batch.t.iter().zip(&batch.tau).map(|(t, s)| t + s).collect();
    model.velocity_batch(end.view(), &t_end)
}

/// Mean `‖∂Φ/∂τ(x,t,τ) − target‖` with the target held fixed.
pub fn loss_derivative(model: &NifmModel, batch: &TargetBatch) -> f64 {
    let s = &batch.span;
    let d = model.tau_derivative_batch(s.x.view(), &s.t, &s.tau);
    mean_norm(&(d - &batch.target))
}

/// Self-consistency loss.
pub fn loss_stage2(model: &NifmModel, batch: &SpanBatch, policy: StepPolicy) -> f64 {
    let target = frozen_targets(model, batch, policy);
    let d = model.tau_derivative_batch(batch.x.view(), &batch.t, &batch.tau);
    mean_norm(&(d - target))
}

/// Derivative loss against stored oracle end velocities.
pub fn loss_flowmap_supervised(model: &NifmModel, batch: &TargetBatch) -> f64 {
    loss_derivative(model, batch)
}

pub fn loss(model: &NifmModel, kind: LossKind) -> f64 {
    match kind {
        LossKind::Stage1(b) => loss_stage1(model, b),
        LossKind::Stage2(b, p) => loss_stage2(model, b, p),
        LossKind::Supervised(b) => loss_derivative(model, b),
    }
}

/// Loss value and reverse-mode gradients, zeroed outside `mask`. The
/// stage-2 target is computed first and treated as a constant.
pub fn backward(model: &NifmModel, kind: LossKind, mask: StageMask) -> Result<(f64, ParamGradients)> {
    let (norms, grads) = backward_rows(model, kind, mask)?;
    Ok((norms.iter().sum::<f64>() / norms.len() as f64, grads))
}

/// As [`backward`], but returns each row's residual norm instead of their
/// mean.
pub fn backward_rows(
    model: &NifmModel,
    kind: LossKind,
    mask: StageMask,
) -> Result<(Vec<f64>, ParamGradients)> {
    let (norms, mut grads) = match kind {
        LossKind::Stage1(b) => velocity_grads(model, b),
        LossKind::Stage2(b, policy) => {
            let target = frozen_targets(model, b, policy);
            derivative_grads(model, b, &target)
        }
        LossKind::Supervised(b) => derivative_grads(model, &b.span, &b.target),
    };
    grads.apply_mask(mask);
    grads.check_finite()?;
    Ok((norms, grads))
}

type Part = (Vec<f64>, Vec<f64>);

fn reduce(model: &NifmModel, parts: Vec<Part>) -> (Vec<f64>, ParamGradients) {
    let mut grads = ParamGradients::zeros(model);
    let mut norms = Vec::new();
    for (l, g) in parts {
        norms.extend(l);
        for (o, v) in grads.values.iter_mut().zip(&g) {
            *o += v;
        }
    }
    (norms, grads)
}

fn velocity_grads(model: &NifmModel, b: &VelocityBatch) -> (Vec<f64>, ParamGradients) {
    let w = Weights::new(model);
    let n = b.t.len();
    let parts = chunks(n)
        .into_par_iter()
        .map(|r| {
            let x = rows(&b.x, &r);
            let t = &b.t[r.clone()];
            let mut res = model.velocity_rows(&w, x, t) - rows(&b.v, &r);
            let l = norm_residual(&mut res, n);
            let mut g = vec![0.0; model.layout().total];
            model.velocity_backward(&w, x, t, &res, &mut g);
            (l, g)
        })
        .collect();
    reduce(model, parts)
}

fn derivative_grads(model: &NifmModel, b: &SpanBatch, target: &Array2<f64>) -> (Vec<f64>, ParamGradients) {
    let w = Weights::new(model);
    let n = b.t.len();
    let parts = chunks(n)
        .into_par_iter()
        .map(|r| {
            let x = rows(&b.x, &r);
            let (t, tau) = (&b.t[r.clone()], &b.tau[r.clone()]);
            let (_, d, tape) = model.flow_dual(&w, x, t, tau);
            let mut res = d - rows(target, &r);
            let l = norm_residual(&mut res, n);
            let mut g = vec![0.0; model.layout().total];
            model.tangent_backward(&w, &tape, x, t, &res, &mut g);
            (l, g)
        })
        .collect();
    reduce(model, parts)
}

#[cfg(test)]
mod tests;
