//! Two-stage optimization.
//!
//! Stage 1 fits the closed-form velocity network to field samples. Stage 2
//! trains every parameter on the self-consistency loss, with the velocity
//! network fine-tuned at a much lower rate. A supervised variant replaces the
//! self-consistency target with stored oracle velocities.

mod adam;
mod config;
mod report;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use config::{scheduled_lr, Stage1Config, Stage2Config, TrainConfig};
pub use report::{BucketPoint, StageReport, TracePoint, TrainReport};

pub use crate::model::{load_checkpoint, save_checkpoint};

use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{Domain, VectorField, VectorFieldSource};
use crate::grad::{backward_rows, LossKind, SpanBatch, StageMask, TargetBatch, VelocityBatch};
use crate::model::{init_params, InitConfig, NifmModel, Normalization, StepPolicy};
use crate::oracle::FlowMapSampleSet;

/// RNG stream ids, so each stage draws independently of how many numbers
/// earlier stages consumed.
const STREAM_STAGE1: u64 = 1;
const STREAM_STAGE2: u64 = 2;
const STREAM_SUPERVISED: u64 = 3;
const STREAM_INIT: u64 = 4;

/// A freshly initialized model for `src`. Gridded fields size their feature
/// grids from the compression ratio unless `init.base_res` is set; analytic
/// fields need `base_res`.
pub fn build_model(src: &VectorFieldSource, init: &InitConfig, cfg: &TrainConfig) -> Result<NifmModel> {
    let arch = match src {
        VectorFieldSource::Gridded(g) => init.architecture(&g.dims)?,
        VectorFieldSource::Analytic(a) => {
            let Some(base) = &init.base_res else {
                return Err(Error::Config(
                    "analytic fields need model.base_res (there is no grid to compress)".into(),
                ));
            };
            let mut dims = vec![a.time_nodes];
            dims.extend(std::iter::repeat_n(2, a.domain.n));
            if base.len() != dims.len() {
                return Err(Error::Config(format!("base_res needs {} axes", dims.len())));
            }
            init.architecture(&dims)?
        }
    };
    let units = src.grid_units();
    let norm = Normalization {
        domain: *src.domain(),
        tau_max: cfg.stage2.tau_max * units.voxel,
        voxel: units.voxel,
    };
    let mut seed_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    seed_rng.set_stream(STREAM_INIT);
    init_params(arch, norm, seed_rng.random())
}

fn uniform_positions(rng: &mut ChaCha8Rng, domain: &Domain, rows: usize) -> Array2<f64> {
    let mut x = Array2::zeros((rows, domain.n));
    for mut row in x.outer_iter_mut() {
        for a in 0..domain.n {
            row[a] = domain.lo[a] + rng.random::<f64>() * domain.extent(a);
        }
    }
    x
}

fn stage1_batch<F: VectorField + ?Sized>(
    rng: &mut ChaCha8Rng,
    src: &F,
    rows: usize,
) -> Result<VelocityBatch> {
    let d = *src.domain();
    let x = uniform_positions(rng, &d, rows);
    let t: Vec<f64> = (0..rows)
        .map(|_| d.t_lo + rng.random::<f64>() * d.duration())
        .collect();
    let mut v = Array2::zeros((rows, d.n));
    for ((xr, &tr), mut vr) in x.outer_iter().zip(&t).zip(v.outer_iter_mut()) {
        src.sample_into(xr.as_slice().unwrap(), tr, vr.as_slice_mut().unwrap());
    }
    VelocityBatch::new(x, t, v)
}

fn stage2_batch(rng: &mut ChaCha8Rng, model: &NifmModel, cfg: &Stage2Config, rows: usize) -> Result<SpanBatch> {
    let d = model.norm.domain;
    let voxel = model.norm.voxel;
    let x = uniform_positions(rng, &d, rows);
    let mut t = Vec::with_capacity(rows);
    let mut tau = Vec::with_capacity(rows);
    for _ in 0..rows {
        let s = (cfg.tau_min + rng.random::<f64>() * (cfg.tau_max - cfg.tau_min)) * voxel;
        let top = (d.t_hi - s).max(d.t_lo);
        t.push(d.t_lo + rng.random::<f64>() * (top - d.t_lo));
        tau.push(s);
    }
    SpanBatch::new(x, t, tau)
}

enum Batch {
    Velocity(VelocityBatch),
    Span(SpanBatch, StepPolicy),
    Target(TargetBatch),
}

impl Batch {
    fn kind(&self) -> LossKind<'_> {
        match self {
            Batch::Velocity(b) => LossKind::Stage1(b),
            Batch::Span(b, p) => LossKind::Stage2(b, *p),
            Batch::Target(b) => LossKind::Supervised(b),
        }
    }

    fn spans(&self) -> Option<&[f64]> {
        match self {
            Batch::Velocity(_) => None,
            Batch::Span(b, _) => Some(&b.tau),
            Batch::Target(b) => Some(&b.span.tau),
        }
    }
}

struct StagePlan {
    name: &'static str,
    steps: usize,
    mask: StageMask,
    /// Rates of the velocity and flow-map groups before decay.
    velocity_lr: f64,
    flow_lr: f64,
    decay_every: usize,
    decay_factor: f64,
    /// Span range in voxels for the quartile traces.
    buckets: Option<(f64, f64)>,
}

fn optimize<B>(model: &mut NifmModel, plan: &StagePlan, cfg: &TrainConfig, mut next_batch: B) -> Result<StageReport>
where
    B: FnMut(&NifmModel) -> Result<Batch>,
{
    let start = Instant::now();
    let layout = model.layout().clone();
    let mut state = AdamState::new(layout.total);
    let mut report = StageReport::new(plan.name, plan.steps);
    let mut losses = Vec::with_capacity(plan.steps);
    let mut above = 0;
    let voxel = model.norm.voxel;
    for step in 0..plan.steps {
        let batch = next_batch(model)?;
        let (norms, grads) = backward_rows(model, batch.kind(), plan.mask)?;
        let loss = norms.iter().sum::<f64>() / norms.len() as f64;
        let initial = losses.first().copied().unwrap_or(loss);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                stage: plan.name,
                step,
                loss,
                initial,
            });
        }
        above = if loss > cfg.divergence_factor * initial { above + 1 } else { 0 };
        if above >= cfg.divergence_patience {
            return Err(Error::Diverged {
                stage: plan.name,
                step,
                loss,
                initial,
            });
        }
        losses.push(loss);
        if step % cfg.trace_every == 0 || step + 1 == plan.steps {
            report.trace.push(TracePoint { step, loss });
            if let (Some((lo, hi)), Some(spans)) = (plan.buckets, batch.spans()) {
                report.record_buckets(step, &norms, spans, voxel, lo, hi);
            }
        }
        let rate = |lr: f64| {
            let r = scheduled_lr(lr, plan.decay_factor, plan.decay_every, step);
            (r > 0.0).then_some(r)
        };
        let lrs: Vec<Option<f64>> = layout
            .tensors
            .iter()
            .map(|t| {
                if !plan.mask.includes(t.group()) {
                    None
                } else if t.group() == crate::model::Group::Velocity {
                    rate(plan.velocity_lr)
                } else {
                    rate(plan.flow_lr)
                }
            })
            .collect();
        adam_step(&mut model.params, &grads.values, &mut state, &layout, &lrs, &cfg.adam)?;
    }
    report.finish(&losses, cfg.smooth_window, start.elapsed());
    Ok(report)
}

/// Stage 1 on an initialized model: fits `W_out (m0 ⊙ f_nu)` to `src`.
pub fn train_stage1<F: VectorField + ?Sized>(
    mut model: NifmModel,
    src: &F,
    cfg: &TrainConfig,
) -> Result<(NifmModel, StageReport)> {
    cfg.check_runnable()?;
    if src.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: src.dim(),
        });
    }
    let s = &cfg.stage1;
    let plan = StagePlan {
        name: "stage1",
        steps: s.steps,
        mask: StageMask::Stage1,
        velocity_lr: s.lr,
        flow_lr: 0.0,
        decay_every: s.decay_every,
        decay_factor: s.decay_factor,
        buckets: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_STAGE1);
    let report = optimize(&mut model, &plan, cfg, |_| {
        Ok(Batch::Velocity(stage1_batch(&mut rng, src, cfg.batch_size)?))
    })?;
    Ok((model, report))
}

fn stage2_plan(name: &'static str, cfg: &TrainConfig) -> StagePlan {
    let s = &cfg.stage2;
    StagePlan {
        name,
        steps: s.steps,
        mask: StageMask::Stage2,
        velocity_lr: s.finetune_lr,
        flow_lr: s.lr,
        decay_every: s.decay_every,
        decay_factor: s.decay_factor,
        buckets: Some((s.tau_min, s.tau_max)),
    }
}

/// Stage 2: self-consistency with `cfg.stage2.policy` compositions.
pub fn train_stage2(mut model: NifmModel, cfg: &TrainConfig) -> Result<(NifmModel, StageReport)> {
    cfg.check_runnable()?;
    let plan = stage2_plan("stage2", cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_STAGE2);
    let report = optimize(&mut model, &plan, cfg, |m| {
        let b = stage2_batch(&mut rng, m, &cfg.stage2, cfg.batch_size)?;
        Ok(Batch::Span(b, cfg.stage2.policy))
    })?;
    Ok((model, report))
}

/// The stage-2 loop with oracle targets: each minibatch draws records with
/// replacement and regresses `∂Φ/∂τ` onto the stored end velocities.
pub fn train_flowmap_supervised(
    mut model: NifmModel,
    data: &FlowMapSampleSet,
    cfg: &TrainConfig,
) -> Result<(NifmModel, StageReport)> {
    cfg.check_runnable()?;
    if data.is_empty() {
        return Err(Error::Config("supervised training needs a non-empty dataset".into()));
    }
    if data.n != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: data.n,
        });
    }
    let plan = stage2_plan("supervised", cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(STREAM_SUPERVISED);
    let n = model.dim();
    let rows = cfg.batch_size;
    let report = optimize(&mut model, &plan, cfg, |_| {
        let picks: Vec<usize> = (0..rows).map(|_| rng.random_range(0..data.len())).collect();
        let x = Array2::from_shape_fn((rows, n), |(r, a)| data.records[picks[r]].query.x[a]);
        let target = Array2::from_shape_fn((rows, n), |(r, a)| data.records[picks[r]].velocity[a]);
        let t = picks.iter().map(|&i| data.records[i].query.t).collect();
        let tau = picks.iter().map(|&i| data.records[i].query.tau).collect();
        Ok(Batch::Target(TargetBatch::new(SpanBatch::new(x, t, tau)?, target)?))
    })?;
    Ok((model, report))
}

/// Builds, then runs both stages. With `stage1_only` the second stage is
/// skipped.
pub fn train(
    src: &VectorFieldSource,
    init: &InitConfig,
    cfg: &TrainConfig,
    stage1_only: bool,
) -> Result<(NifmModel, TrainReport)> {
    let model = build_model(src, init, cfg)?;
    let (model, s1) = train_stage1(model, src, cfg)?;
    let mut report = TrainReport::new(cfg.clone());
    report.stages.push(s1);
    if stage1_only {
        return Ok((model, report));
    }
    let (model, s2) = train_stage2(model, cfg)?;
    report.stages.push(s2);
    Ok((model, report))
}
