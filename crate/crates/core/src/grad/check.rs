//! Central finite-difference verification of [`backward`](super::backward).

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{backward, frozen_targets, loss, LossKind, SpanBatch, StageMask, TargetBatch, VelocityBatch};
use crate::error::Result;
use crate::field::VectorField;
use crate::model::{init_params, Architecture, NifmModel, Normalization, StepPolicy};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckRow {
    pub tensor: String,
    pub entries: usize,
    /// `max |fd − analytic| / max(max |fd|, max |analytic|)` over the tensor.
    pub max_rel_err: f64,
}

/// Compares analytic gradients against central differences for every
/// parameter. Each entry `p` is perturbed by `±rel · max(|p|, 0.1)`; the
/// difference quotient uses the perturbation actually representable in f32.
/// The stage-2 target is frozen at the unperturbed model, matching
/// [`backward`].
pub fn check_gradients(model: &NifmModel, kind: LossKind, rel: f64) -> Result<Vec<GradCheckRow>> {
    let frozen;
    let kind = match kind {
        LossKind::Stage2(b, policy) => {
            frozen = TargetBatch::new(b.clone(), frozen_targets(model, b, policy))?;
            LossKind::Supervised(&frozen)
        }
        other => other,
    };
    let mask = match kind {
        LossKind::Stage1(_) => StageMask::Stage1,
        _ => StageMask::Stage2,
    };
    let (_, analytic) = backward(model, kind, mask)?;
    let mut probe = model.clone();
    let mut rows = Vec::new();
    for info in &model.layout().tensors {
        if !mask.includes(info.group()) {
            continue;
        }
        let (mut worst, mut scale) = (0.0f64, 0.0f64);
        for i in info.range() {
            let p = model.params[i];
            let h = rel * (p.abs() as f64).max(0.1);
            let up = (p as f64 + h) as f32;
            let down = (p as f64 - h) as f32;
            probe.params[i] = up;
            let lu = loss(&probe, kind);
            probe.params[i] = down;
            let ld = loss(&probe, kind);
            probe.params[i] = p;
            let fd = (lu - ld) / (up as f64 - down as f64);
            let an = analytic.values[i];
            worst = worst.max((fd - an).abs());
            scale = scale.max(fd.abs()).max(an.abs());
        }
        rows.push(GradCheckRow {
            tensor: info.name.clone(),
            entries: info.len(),
            max_rel_err: if scale > 0.0 { worst / scale } else { 0.0 },
        });
    }
    Ok(rows)
}

/// A one-level, width-8 model over `norm.domain` whose parameters are all
/// redrawn uniformly from ±0.6 so every pathway carries signal.
pub fn toy_model(norm: Normalization, seed: u64) -> Result<NifmModel> {
    let n = norm.domain.n;
    let mut res = vec![3, 4, 3];
    res.resize(n + 1, 3);
    let arch = Architecture {
        n,
        width: 8,
        feat_dim: 8,
        resolutions: vec![res],
        nu_layers: 2,
        tau_layers: 1,
        depth: 4,
    };
    let mut m = init_params(arch, norm, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut m.params {
        *v = rng.random_range(-0.6..0.6);
    }
    Ok(m)
}

/// Runs [`check_gradients`] for both stage losses on random batches of
/// `rows` rows: stage 1 against `field`, stage 2 with spans up to the
/// model's `tau_max`. Rows are labelled `stage1` or `stage2`.
pub fn check_stage_losses<F: VectorField + ?Sized>(
    model: &NifmModel,
    field: &F,
    rows: usize,
    seed: u64,
    rel: f64,
) -> Result<Vec<(&'static str, GradCheckRow)>> {
    let d = model.norm.domain;
    let n = d.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let positions = |rng: &mut ChaCha8Rng| {
        Array2::from_shape_fn((rows, n), |(_, a)| d.lo[a] + rng.random::<f64>() * d.extent(a))
    };
    let x = positions(&mut rng);
    let t: Vec<f64> = (0..rows).map(|_| d.t_lo + rng.random::<f64>() * d.duration()).collect();
    let mut v = Array2::zeros((rows, n));
    for r in 0..rows {
        let s = field.sample(x.row(r).as_slice().unwrap(), t[r])?;
        v.row_mut(r).assign(&ndarray::ArrayView1::from(&s));
    }
    let vb = VelocityBatch::new(x, t, v)?;
    let x = positions(&mut rng);
    let t: Vec<f64> = (0..rows).map(|_| d.t_lo + rng.random::<f64>() * 0.5 * d.duration()).collect();
    let tau = (0..rows)
        .map(|_| (0.1 + 0.9 * rng.random::<f64>()) * model.norm.tau_max)
        .collect();
    let sb = SpanBatch::new(x, t, tau)?;
    let mut out = Vec::new();
    for (label, kind) in [
        ("stage1", LossKind::Stage1(&vb)),
        ("stage2", LossKind::Stage2(&sb, StepPolicy::Sqrt)),
    ] {
        out.extend(check_gradients(model, kind, rel)?.into_iter().map(|r| (label, r)));
    }
    Ok(out)
}
