use ndarray::{arr2, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::tests::{norm2, random_model};
use crate::model::{Architecture, NifmModel};
use crate::oracle::FlowQuery;

fn toy() -> NifmModel {
    let arch = Architecture {
        n: 2,
        width: 8,
        feat_dim: 8,
        resolutions: vec![vec![3, 4, 3]],
        nu_layers: 2,
        tau_layers: 1,
        depth: 4,
    };
    random_model(arch, norm2(), 21)
}

fn span_batch(rows: usize, seed: u64, model: &NifmModel) -> SpanBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = model.norm.domain;
    let x = Array2::from_shape_fn((rows, 2), |(_, a)| rng.random_range(d.lo[a]..d.hi[a]));
    let t = (0..rows).map(|_| rng.random_range(0.0..6.0)).collect();
    let tau = (0..rows)
        .map(|_| rng.random_range(0.1..1.0) * model.norm.tau_max)
        .collect();
    SpanBatch::new(x, t, tau).unwrap()
}

fn velocity_batch(rows: usize, seed: u64) -> VelocityBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((rows, 2), |(_, a)| rng.random_range(0.0..[2.0, 1.0][a]));
    let t = (0..rows).map(|_| rng.random_range(0.0..10.0)).collect();
    let v = Array2::from_shape_fn((rows, 2), |_| rng.random_range(-0.4..0.4));
    VelocityBatch::new(x, t, v).unwrap()
}

#[test]
fn stage1_loss_examples() {
    let zero = NifmModel::zeros(toy().arch.clone(), norm2()).unwrap();
    let x = arr2(&[[0.3, 0.2], [1.5, 0.9]]);
    let c = arr2(&[[0.3, -0.4], [0.3, -0.4]]);
    let b = VelocityBatch::new(x.clone(), vec![1.0, 4.0], c).unwrap();
    assert!((loss_stage1(&zero, &b) - 0.5).abs() < 1e-15);

    let hand = VelocityBatch::new(x, vec![1.0, 4.0], arr2(&[[3.0, 4.0], [0.0, -1.0]])).unwrap();
    assert!((loss_stage1(&zero, &hand) - 3.0).abs() < 1e-15);

    let m = toy();
    let fit = m.velocity_batch(b.x.view(), &b.t);
    let exact = VelocityBatch::new(b.x.clone(), b.t.clone(), fit).unwrap();
    assert_eq!(loss_stage1(&m, &exact), 0.0);
    let (l, g) = backward(&m, LossKind::Stage1(&exact), StageMask::Stage1).unwrap();
    assert_eq!(l, 0.0);
    assert!(g.values.iter().all(|&v| v == 0.0));
}

#[test]
fn stage2_loss_examples() {
    let mut m = toy();
    let b = span_batch(5, 1, &m);

    // all gates zero: Φ = x for every span, velocity zero everywhere
    let mut still = m.clone();
    for l in 0..4 {
        still.tensor_mut(&format!("m{l}")).unwrap().fill(0.0);
    }
    assert_eq!(loss_stage2(&still, &b, StepPolicy::Sqrt), 0.0);

    // vanishing span: derivative and target both approach the velocity at x
    let tiny = SpanBatch::new(b.x.clone(), b.t.clone(), vec![1e-9; 5]).unwrap();
    assert!(loss_stage2(&m, &tiny, StepPolicy::Sqrt) < 1e-7);

    // single sample against the chained public operations
    m.norm.voxel = 0.1;
    let one = SpanBatch::new(b.x.slice(ndarray::s![0..1, ..]).to_owned(), vec![b.t[0]], vec![b.tau[0]])
        .unwrap();
    let q = FlowQuery::new(one.x.row(0).to_vec(), one.t[0], one.tau[0]);
    let k = k_for_tau(StepPolicy::Sqrt, q.tau / 0.1);
    assert!(k > 1);
    let end = m.forward_multi_step(&q, k).unwrap();
    let target = m.instantaneous_velocity(&end, q.t + q.tau).unwrap();
    let lhs = m.tau_derivative(&q).unwrap();
    let hand = ((lhs[0] - target[0]).powi(2) + (lhs[1] - target[1]).powi(2)).sqrt();
    assert!((loss_stage2(&m, &one, StepPolicy::Sqrt) - hand).abs() < 1e-14);
}

#[test]
fn supervised_loss_examples() {
    let m = toy();
    let b = span_batch(1, 2, &m);
    let q = FlowQuery::new(b.x.row(0).to_vec(), b.t[0], b.tau[0]);
    let d = m.tau_derivative(&q).unwrap();
    let target = arr2(&[[d[0] + 0.3, d[1] - 0.4]]);
    let tb = TargetBatch::new(b.clone(), target).unwrap();
    assert!((loss_flowmap_supervised(&m, &tb) - 0.5).abs() < 1e-12);

    // coincides with stage 2 when the stored target is the model's own
    let own = TargetBatch::new(b.clone(), frozen_targets(&m, &b, StepPolicy::Sqrt)).unwrap();
    assert_eq!(
        loss_flowmap_supervised(&m, &own),
        loss_stage2(&m, &b, StepPolicy::Sqrt)
    );
}

#[test]
fn finite_difference_agreement() {
    let m = toy();
    let vb = velocity_batch(12, 3);
    let sb = span_batch(12, 4, &m);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let target = Array2::from_shape_fn((12, 2), |_| rng.random_range(-0.5..0.5));
    let tb = TargetBatch::new(sb.clone(), target).unwrap();
    for kind in [
        LossKind::Stage1(&vb),
        LossKind::Stage2(&sb, StepPolicy::Sqrt),
        LossKind::Supervised(&tb),
    ] {
        let rows = check_gradients(&m, kind, 1e-3).unwrap();
        assert!(!rows.is_empty());
        for r in rows {
            assert!(r.max_rel_err <= 1e-3, "{kind:?}: {r:?}");
        }
    }
}

#[test]
fn stage1_mask_is_sound() {
    let m = toy();
    let vb = velocity_batch(20, 6);
    let sb = span_batch(20, 7, &m);
    for (kind, mask) in [
        (LossKind::Stage1(&vb), StageMask::Stage2),
        (LossKind::Stage2(&sb, StepPolicy::Sqrt), StageMask::Stage1),
    ] {
        let (_, g) = backward(&m, kind, mask).unwrap();
        for info in &m.layout().tensors {
            let slice = &g.values[info.range()];
            if info.group() == Group::FlowMap {
                assert!(slice.iter().all(|&v| v == 0.0), "{}", info.name);
            }
        }
        let nonzero = g.tensor("w_out").unwrap().iter().any(|&v| v != 0.0);
        assert!(nonzero);
    }
}

#[test]
fn target_branch_is_frozen() {
    let m = toy();
    let sb = span_batch(30, 8, &m);
    let (l2, g2) = backward(&m, LossKind::Stage2(&sb, StepPolicy::Sqrt), StageMask::Stage2).unwrap();
    let detached = m.clone();
    let tb = TargetBatch::new(sb.clone(), frozen_targets(&detached, &sb, StepPolicy::Sqrt)).unwrap();
    let (ls, gs) = backward(&m, LossKind::Supervised(&tb), StageMask::Stage2).unwrap();
    assert_eq!(l2, ls);
    assert_eq!(g2, gs);
}

#[test]
fn reduction_is_thread_independent() {
    let m = random_model(crate::model::tests::small_arch(2), norm2(), 3);
    let sb = span_batch(1300, 9, &m);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| backward(&m, LossKind::Stage2(&sb, StepPolicy::Sqrt), StageMask::Stage2).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn non_finite_gradients_name_the_tensor() {
    let mut m = toy();
    let vb = velocity_batch(4, 10);
    m.tensor_mut("w_out").unwrap()[0] = f32::NAN;
    match backward(&m, LossKind::Stage1(&vb), StageMask::Stage1) {
        Err(Error::NonFiniteTensor(name)) => assert!(!name.is_empty()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn batch_shapes_are_checked() {
    let x = Array2::zeros((3, 2));
    assert!(SpanBatch::new(x.clone(), vec![0.0; 2], vec![0.0; 3]).is_err());
    assert!(SpanBatch::new(Array2::zeros((0, 2)), vec![], vec![]).is_err());
    assert!(VelocityBatch::new(x, vec![0.0; 3], Array2::zeros((3, 3))).is_err());
}
