use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::field::AnalyticKind;
use crate::model::tests::{norm2, random_model, small_arch};
use crate::oracle::Scheme;

fn unit_box() -> Domain {
    Domain::new(&[0.0, 0.0], &[2.0, 1.0], 0.0, 10.0).unwrap()
}

fn analytic(kind: AnalyticKind, domain: Domain) -> AnalyticField {
    AnalyticField::new(kind, domain, 64).unwrap()
}

fn rk4(h: f64) -> IntegratorSpec {
    IntegratorSpec::new(Scheme::Rk4, h).unwrap()
}

#[test]
fn error_metric_by_hand() {
    let moved = analytic(AnalyticKind::Constant { c: vec![0.1, 0.0] }, unit_box());
    let still = analytic(AnalyticKind::Constant { c: vec![0.0, 0.0] }, unit_box());
    let (p, r) = (FlowMapProvider::exact(&moved).unwrap(), FlowMapProvider::exact(&still).unwrap());
    let q = [FlowQuery::new([0.5, 0.5], 1.0, 1.0)];
    let e = flow_map_error(&p, &r, &q).unwrap();
    assert!((e.mean_err - 0.044721359549995794).abs() < 1e-15, "{e:?}");
    assert_eq!((e.max_err, e.n, e.t0, e.tau), (e.mean_err, 1, 1.0, 1.0));
    assert_eq!(flow_map_error(&r, &r, &q).unwrap().mean_err, 0.0);

    // sign symmetry, linear scaling, translation invariance
    let back = analytic(AnalyticKind::Constant { c: vec![-0.1, 0.0] }, unit_box());
    let far = analytic(AnalyticKind::Constant { c: vec![0.3, 0.0] }, unit_box());
    let shifted = analytic(AnalyticKind::Constant { c: vec![0.35, -0.2] }, unit_box());
    let shift_ref = analytic(AnalyticKind::Constant { c: vec![0.25, -0.2] }, unit_box());
    let err = |a: &AnalyticField, b: &AnalyticField| {
        let (a, b) = (FlowMapProvider::exact(a).unwrap(), FlowMapProvider::exact(b).unwrap());
        flow_map_error(&a, &b, &q).unwrap().mean_err
    };
    assert!((err(&back, &still) - e.mean_err).abs() < 1e-15);
    assert!((err(&far, &still) - 3.0 * e.mean_err).abs() < 1e-15);
    assert!((err(&shifted, &shift_ref) - e.mean_err).abs() < 1e-14);

    assert!(flow_map_error(&p, &r, &[]).is_err());
    let mixed = [FlowQuery::new([0.5, 0.5], 1.0, 1.0), FlowQuery::new([0.5, 0.5], 2.0, 1.0)];
    assert!(flow_map_error(&p, &r, &mixed).unwrap().t0.is_nan());
    let gyre = AnalyticField::double_gyre(64);
    assert!(FlowMapProvider::exact(&gyre).is_err());
}

#[test]
fn ftle_trivial_and_linear_fields() {
    let c = analytic(AnalyticKind::Constant { c: vec![0.3, -0.1] }, unit_box());
    let p = FlowMapProvider::oracle(&c, rk4(0.05));
    for tau in [0.5, 3.0, -2.0] {
        let g = ftle(&p, 1.0, tau, &[21, 11], None).unwrap();
        assert!(g.values.iter().all(|&v| (0.0..=1e-6).contains(&v)));
    }
    let rot = analytic(AnalyticKind::RigidRotation { omega: 1.0 }, unit_box());
    let g = ftle(&FlowMapProvider::oracle(&rot, rk4(0.01)), 0.0, 2.0, &[9, 5], None).unwrap();
    assert!(g.values.iter().all(|&v| v <= 1e-6));

    let box2 = Domain::new(&[-1.0, -1.0], &[1.0, 1.0], 0.0, 10.0).unwrap();
    let saddle = analytic(AnalyticKind::Saddle { lambda: 0.5 }, box2);
    let p = FlowMapProvider::oracle(&saddle, rk4(0.01));
    for tau in [2.0, -2.0] {
        let g = ftle(&p, 0.0, tau, &[17, 17], None).unwrap();
        assert_eq!(g.dims, vec![17, 17]);
        for &v in &g.values {
            assert!((v as f64 - 0.5).abs() < 1e-3, "{v}");
        }
    }
    let box3 = Domain::new(&[-1.0, -1.0, -1.0], &[1.0, 1.0, 1.0], 0.0, 10.0).unwrap();
    let saddle3 = analytic(AnalyticKind::Saddle { lambda: 0.5 }, box3);
    let g = ftle(&FlowMapProvider::exact(&saddle3).unwrap(), 0.0, 2.0, &[5, 5, 5], None).unwrap();
    assert!(g.values.iter().all(|&v| (v as f64 - 0.5).abs() < 1e-6));

    assert!(ftle(&p, 0.0, 0.0, &[5, 5], None).is_err());
    assert!(ftle(&p, 0.0, 1.0, &[5, 5], Some(0.6)).is_err());
    assert!(ftle(&p, 0.0, 1.0, &[5, 5], Some(0.5)).is_ok());
    assert!(ftle(&p, 0.0, 1.0, &[5], None).is_err());
}

#[test]
fn symmetric_eigenvalues() {
    assert_eq!(max_eigenvalue_sym(&[2.0, 1.0, 1.0, 2.0], 2), 3.0);
    assert_eq!(max_eigenvalue_sym(&[1.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 2.0], 3), 5.0);
    let m = [2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 1.0];
    assert!((max_eigenvalue_sym(&m, 3) - 3.0).abs() < 1e-12);
    // power iteration on a random positive definite matrix
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let a: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut c = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                c[3 * i + j] = (0..3).map(|k| a[3 * k + i] * a[3 * k + j]).sum();
            }
        }
        let mut v = [1.0, 0.7, 0.3];
        let mut lambda = 0.0;
        for _ in 0..2000 {
            let w: Vec<f64> = (0..3).map(|i| (0..3).map(|j| c[3 * i + j] * v[j]).sum()).collect();
            lambda = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            for i in 0..3 {
                v[i] = w[i] / lambda;
            }
        }
        assert!((max_eigenvalue_sym(&c, 3) - lambda).abs() < 1e-8 * lambda.max(1.0));
    }
}

#[test]
fn neural_provider_chains_segments() {
    let model = random_model(small_arch(2), norm2(), 3);
    let p = FlowMapProvider::neural(&model, StepPolicy::Sqrt);
    // tau_max 4, voxel 10/63: a span of 10 is 3 segments of 21 voxels, 5 steps each
    assert_eq!(p.neural_steps(10.0), 15);
    assert_eq!(p.neural_steps(4.0), 6);
    assert_eq!(p.neural_steps(0.0), 1);
    let single = FlowMapProvider::Neural {
        model: &model,
        policy: StepPolicy::Single,
        segment: Some(1.0),
    };
    assert_eq!(single.neural_steps(2.5), 3);

    let q = FlowQuery::new([0.7, 0.4], 1.0, 10.0);
    let direct = model.forward_multi_step(&q, 15).unwrap();
    assert_eq!(p.answer(&q).unwrap(), direct);
    assert_eq!(p.answer(&FlowQuery::new([0.7, 0.4], 1.0, 0.0)).unwrap(), vec![0.7, 0.4]);
    assert!(p.answer(&FlowQuery::new([0.7, 0.4, 0.1], 1.0, 1.0)).is_err());
}

#[test]
fn streaklines_match_per_query_answers() {
    let gyre = AnalyticField::double_gyre(64);
    let spec = rk4(0.05);
    let oracle = FlowMapProvider::oracle(&gyre, spec);
    let releases: Vec<f64> = (0..12).map(|i| 5.0 - 0.4 * i as f64).collect();
    let s = streaklines(&oracle, &[1.0, 0.4], &releases, 5.0).unwrap();
    let r = reference_streakline(&gyre, &[1.0, 0.4], &releases, 5.0, &spec).unwrap();
    assert_eq!(s, r);

    let model = random_model(small_arch(2), norm2(), 8);
    let p = FlowMapProvider::neural(&model, StepPolicy::Sqrt);
    let s = streaklines(&p, &[1.0, 0.4], &releases, 5.0).unwrap();
    assert!(s.vertices.windows(2).all(|w| w[0].t < w[1].t));
    for v in &s.vertices {
        let a = p.answer(&FlowQuery::new([1.0, 0.4], v.t, 5.0 - v.t)).unwrap();
        for (x, y) in v.x.iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    assert_eq!(s.vertices.last().unwrap().x, vec![1.0, 0.4]);
    let one = streaklines(&p, &[1.0, 0.4], &[5.0], 5.0).unwrap();
    assert_eq!(one.vertices, vec![Vertex { x: vec![1.0, 0.4], t: 5.0 }]);
    assert!(streaklines(&p, &[1.0, 0.4], &[5.5], 5.0).is_err());

    let csv = streak_csv(&one, 2);
    assert_eq!(csv, "release_t,x,y\n5,1,0.4\n");
}

#[test]
fn sweeps_are_deterministic() {
    let gyre = AnalyticField::double_gyre(64);
    let coarse = FlowMapProvider::oracle(&gyre, IntegratorSpec::new(Scheme::Euler, 0.1).unwrap());
    let fine = FlowMapProvider::oracle(&gyre, rk4(0.05));
    let a = evaluation_sweep(&coarse, &fine, &[0.0, 2.0], &[1.0, 3.0], 50, 9).unwrap();
    let b = evaluation_sweep(&coarse, &fine, &[0.0, 2.0], &[1.0, 3.0], 50, 9).unwrap();
    assert_eq!(sweep_csv(&a, false), sweep_csv(&b, false));
    assert_eq!(a.len(), 4);
    assert_eq!((a[1].t0, a[1].tau, a[2].t0, a[2].tau), (0.0, 3.0, 2.0, 1.0));
    assert!(a.iter().all(|r| r.mean_err > 0.0 && r.max_err >= r.mean_err && r.n == 50));

    let one = evaluation_sweep(&coarse, &fine, &[2.0], &[1.5], 30, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let queries = random_queries(&mut rng, gyre.domain(), 2.0, 1.5, 30);
    let direct = flow_map_error(&coarse, &fine, &queries).unwrap();
    assert_eq!((one[0].mean_err, one[0].max_err), (direct.mean_err, direct.max_err));

    let self_test = evaluation_sweep(&fine, &fine, &[0.0], &[2.0], 20, 1).unwrap();
    assert_eq!(self_test[0].mean_err, 0.0);
    assert!(sweep_csv(&self_test, false).ends_with(",0.000\n"));
    assert!(evaluation_sweep(&fine, &fine, &[], &[2.0], 20, 1).is_err());
}

#[test]
fn integrator_comparison() {
    let c = analytic(AnalyticKind::Constant { c: vec![0.02, 0.01] }, unit_box());
    let rows = euler_rk4_model_comparison(&c, None, &[0.1, 0.05], &[], &[1.0, 2.0], 20, 1).unwrap();
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.err < 1e-12));

    let box2 = Domain::new(&[-1.0, -1.0], &[1.0, 1.0], 0.0, 10.0).unwrap();
    let rot = analytic(AnalyticKind::RigidRotation { omega: 1.0 }, box2);
    let model = random_model(small_arch(2), norm2(), 2);
    let hs = [0.1, 0.05, 0.025, 0.0125];
    let rows = euler_rk4_model_comparison(&rot, None, &hs, &[], &[1.0], 16, 3).unwrap();
    let euler = convergence_slope(&rows, "euler", 1.0).unwrap();
    let rk = convergence_slope(&rows, "rk4", 1.0).unwrap();
    assert!((0.7..=1.3).contains(&euler), "{euler}");
    assert!((3.5..=4.5).contains(&rk), "{rk}");
    let csv = comparison_csv(&rows);
    assert!(csv.starts_with("method,param,tau,err\neuler,0.1,1,"));

    let with_model = euler_rk4_model_comparison(&c, Some(&model), &[0.1], &[1, 3], &[1.0], 8, 1).unwrap();
    let nifm: Vec<_> = with_model.iter().filter(|r| r.method == "nifm").collect();
    assert_eq!(nifm.iter().map(|r| r.param).collect::<Vec<_>>(), vec![1.0, 3.0]);
    assert!(nifm.iter().all(|r| r.err.is_finite() && r.err > 0.0));
    assert!(euler_rk4_model_comparison(&AnalyticField::double_gyre(64), None, &[0.1], &[], &[1.0], 4, 1).is_err());
}

#[test]
fn pgm_output() {
    let g = ScalarGrid::new(vec![2, 2], vec![0.0, 0.0], vec![2.0, 1.0], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let bytes = encode_pgm(&g, ImageRange::Auto).unwrap();
    let img = read_pgm(&mut &bytes[..]).unwrap();
    assert_eq!((img.width, img.height), (2, 2));
    assert_eq!(img.pixels, vec![170, 255, 0, 85]);
    assert!(img.comment.contains("row 0 is max y"));

    let flat = ScalarGrid::new(vec![3, 2], vec![0.0, 0.0], vec![1.0, 1.0], vec![1.0; 6]).unwrap();
    let img = read_pgm(&mut &encode_pgm(&flat, ImageRange::Auto).unwrap()[..]).unwrap();
    assert_eq!(img.pixels, vec![0; 6]);
    let img = read_pgm(&mut &encode_pgm(&flat, ImageRange::Fixed(0.0, 2.0)).unwrap()[..]).unwrap();
    assert_eq!(img.pixels, vec![128; 6]);
    assert_eq!((img.width, img.height), (3, 2));
    assert!(encode_pgm(&flat, ImageRange::Fixed(1.0, 1.0)).is_err());

    let cube = ScalarGrid::new(vec![2, 2, 2], vec![0.0; 3], vec![1.0; 3], (0..8).map(|v| v as f32).collect()).unwrap();
    assert!(encode_pgm(&cube, ImageRange::Auto).is_err());
    assert_eq!(cube.slice_z(1).unwrap().values, vec![4.0, 5.0, 6.0, 7.0]);
    assert_eq!(cube.get(&[1, 0, 1]), 5.0);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/ftle.pgm");
    emit_scalar_image(&g, &path, ImageRange::Auto).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert!(read_pgm(&mut &bytes[..bytes.len() - 1]).is_err());
    assert!(ScalarGrid::new(vec![2, 2], vec![0.0; 2], vec![1.0; 2], vec![0.0, f32::NAN, 0.0, 0.0]).is_err());

    assert_eq!(g.to_csv(), "x,y,value\n0,0,0\n2,0,1\n0,1,2\n2,1,3\n");
}
