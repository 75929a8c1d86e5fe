//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero when any criterion fails.
//!
//! `NIFM_ACCEPTANCE=1,2,5` restricts the run to the listed criteria. The
//! trained double-gyre model is shared by criteria 7 to 11 and trained on
//! first use; its training time counts toward criterion 7 only.

use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nifm::analysis::{
    convergence_slope, euler_rk4_model_comparison, evaluation_sweep, flow_map_error, ftle, random_queries, ErrorRecord,
    FlowMapProvider,
};
use nifm::cli::{Preset, RunConfig};
use nifm::error::Result;
use nifm::field::{AnalyticField, AnalyticKind, Domain, VectorField, VectorFieldSource};
use nifm::grad::{check_stage_losses, toy_model};
use nifm::model::{init_params, Architecture, Group, NifmModel, Normalization, StepPolicy};
use nifm::oracle::{sample_flow_map_dataset, FlowQuery};
use nifm::train::{build_model, train, train_flowmap_supervised, train_stage1, TrainReport};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict {
        pass,
        detail: detail.into(),
    })
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Result<Verdict>,
}

const fn minutes(m: u64) -> Duration {
    Duration::from_secs(60 * m)
}

fn criteria() -> Vec<Criterion> {
    vec![
        Criterion { id: 1, name: "identity at zero span", budget: Duration::from_secs(5), run: identity_at_zero_span },
        Criterion { id: 2, name: "closed-form instantaneous velocity", budget: Duration::from_secs(30), run: closed_form_velocity },
        Criterion { id: 3, name: "velocity decoupled from flow-map parameters", budget: Duration::from_secs(10), run: decoupling },
        Criterion { id: 4, name: "gradients of both stage losses", budget: minutes(1), run: gradients },
        Criterion { id: 5, name: "oracle convergence orders", budget: Duration::from_secs(30), run: convergence_orders },
        Criterion { id: 6, name: "constant and rotation fields end to end", budget: minutes(20), run: analytic_end_to_end },
        Criterion { id: 7, name: "desk double gyre sweep", budget: minutes(45), run: double_gyre_sweep },
        Criterion { id: 8, name: "training progress", budget: minutes(45), run: training_progress },
        Criterion { id: 9, name: "FTLE sanity", budget: minutes(15), run: ftle_sanity },
        Criterion { id: 10, name: "supervision ablation parity", budget: minutes(90), run: supervision_parity },
        Criterion { id: 11, name: "step-policy robustness", budget: minutes(20), run: policy_robustness },
        Criterion { id: 12, name: "strict-mode determinism", budget: minutes(10), run: determinism },
    ]
}

fn arch(n: usize) -> Architecture {
    Architecture {
        n,
        width: 16,
        feat_dim: 4,
        resolutions: vec![vec![5; n + 1], [7, 6, 9, 5][..n + 1].to_vec()],
        nu_layers: 2,
        tau_layers: 1,
        depth: 4,
    }
}

fn norm(n: usize) -> Normalization {
    if n == 2 {
        Normalization {
            domain: Domain::new(&[0.0, 0.0], &[2.0, 1.0], 0.0, 10.0).unwrap(),
            tau_max: 4.0,
            voxel: 10.0 / 63.0,
        }
    } else {
        Normalization {
            domain: Domain::new(&[-1.0; 3], &[1.0; 3], 0.0, 1.0).unwrap(),
            tau_max: 0.5,
            voxel: 0.1,
        }
    }
}

/// A model whose parameters are all drawn at order-one scale.
fn random_model(n: usize, seed: u64) -> NifmModel {
    let mut m = init_params(arch(n), norm(n), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xacce);
    for v in &mut m.params {
        *v = rng.random_range(-0.6..0.6);
    }
    m
}

fn random_query(rng: &mut ChaCha8Rng, m: &NifmModel) -> FlowQuery {
    let d = m.norm.domain;
    let x: Vec<f64> = (0..d.n).map(|a| rng.random_range(d.lo[a]..d.hi[a])).collect();
    let tau = rng.random_range(-1.0..1.0) * m.norm.tau_max;
    FlowQuery::new(x, rng.random_range(d.t_lo..d.t_hi), tau)
}

fn identity_at_zero_span() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for seed in 0..1000 {
        let m = random_model(2 + (seed as usize % 2), seed);
        let mut q = random_query(&mut rng, &m);
        q.tau = 0.0;
        let y = m.forward(&q)?;
        worst = y.iter().zip(&q.x).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    verdict(worst == 0.0, format!("max |Φ(x,t,0) - x| = {worst:e} over 1000 models"))
}

fn closed_form_velocity() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut closed, mut fd_rel) = (0.0f64, 0.0f64);
    for seed in 0..1000 {
        let m = random_model(2 + (seed as usize % 2), 10_000 + seed);
        let q = random_query(&mut rng, &m);
        let at_zero = FlowQuery::new(q.x.clone(), q.t, 0.0);
        let d0 = m.tau_derivative(&at_zero)?;
        let v = m.instantaneous_velocity(&q.x, q.t)?;
        closed = d0.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(closed, f64::max);

        let eps = 1e-4;
        let p = m.forward(&FlowQuery::new(q.x.clone(), q.t, q.tau + eps))?;
        let n = m.forward(&FlowQuery::new(q.x.clone(), q.t, q.tau - eps))?;
        let d = m.tau_derivative(&q)?;
        let fd: Vec<f64> = p.iter().zip(&n).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let scale = fd.iter().map(|v| v.abs()).fold(1e-3, f64::max);
        fd_rel = d.iter().zip(&fd).map(|(a, b)| (a - b).abs() / scale).fold(fd_rel, f64::max);
    }
    verdict(
        closed <= 1e-12 && fd_rel <= 1e-4,
        format!("closed form {closed:.2e} (<= 1e-12), central differences {fd_rel:.2e} (<= 1e-4)"),
    )
}

fn decoupling() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = random_model(2, 77);
    let probes: Vec<FlowQuery> = (0..32).map(|_| random_query(&mut rng, &base)).collect();
    let before: Vec<Vec<f64>> = probes
        .iter()
        .map(|q| base.instantaneous_velocity(&q.x, q.t))
        .collect::<Result<_>>()?;
    let flow_map: Vec<_> = base
        .layout()
        .tensors
        .iter()
        .filter(|t| t.group() == Group::FlowMap)
        .cloned()
        .collect();
    let names: Vec<&str> = flow_map.iter().map(|t| t.name.as_str()).collect();
    let mut changed = 0;
    for _ in 0..100 {
        let mut m = base.clone();
        for info in &flow_map {
            for v in &mut m.params[info.range()] {
                *v += rng.random_range(-1.0..1.0);
            }
        }
        for (q, b) in probes.iter().zip(&before) {
            if &m.instantaneous_velocity(&q.x, q.t)? != b {
                changed += 1;
            }
        }
    }
    verdict(
        changed == 0,
        format!("{changed} of 3200 velocities changed after perturbing {}", names.join(" ")),
    )
}

fn gradients() -> Result<Verdict> {
    let dg = AnalyticField::double_gyre(64);
    let units = dg.grid_units();
    let n = Normalization {
        domain: *dg.domain(),
        tau_max: 8.0 * units.voxel,
        voxel: units.voxel,
    };
    let model = toy_model(n, 4)?;
    let rows = check_stage_losses(&model, &dg, 24, 4, 1e-3)?;
    let (worst_loss, worst) = rows
        .iter()
        .max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err))
        .unwrap();
    verdict(
        worst.max_rel_err <= 1e-3,
        format!(
            "{} tensor checks, worst {worst_loss}/{} {:.2e} (<= 1e-3)",
            rows.len(),
            worst.tensor,
            worst.max_rel_err
        ),
    )
}

fn convergence_orders() -> Result<Verdict> {
    let domain = Domain::new(&[-1.0, -1.0], &[1.0, 1.0], 0.0, 10.0)?;
    let rot = AnalyticField::new(AnalyticKind::RigidRotation { omega: 0.5 }, domain, 64)?;
    let rows = euler_rk4_model_comparison(&rot, None, &[0.1, 0.05, 0.025, 0.0125], &[], &[1.0], 64, 5)?;
    let euler = convergence_slope(&rows, "euler", 1.0).unwrap_or(f64::NAN);
    let rk4 = convergence_slope(&rows, "rk4", 1.0).unwrap_or(f64::NAN);
    verdict(
        (0.7..=1.3).contains(&euler) && (3.5..=4.5).contains(&rk4),
        format!("euler slope {euler:.3} in [0.7,1.3], rk4 slope {rk4:.3} in [3.5,4.5]"),
    )
}

/// Worst cell mean over the spans `{6, 12, 24}` grid units.
fn worst_cell(records: &[ErrorRecord]) -> f64 {
    records.iter().map(|r| r.mean_err).fold(0.0, f64::max)
}

/// Mean error per span, averaged over start times.
fn per_span(records: &[ErrorRecord], spans: &[f64]) -> Vec<f64> {
    spans
        .iter()
        .map(|&s| {
            let cells: Vec<f64> = records.iter().filter(|r| r.tau == s).map(|r| r.mean_err).collect();
            cells.iter().sum::<f64>() / cells.len() as f64
        })
        .collect()
}

/// Random queries whose closed-form pathline stays inside the domain; the
/// model never sees velocities outside it.
fn contained_queries(field: &AnalyticField, t0: f64, tau: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<FlowQuery> {
    let d = field.domain;
    let inside = |q: &FlowQuery| {
        (1..=16).all(|i| {
            let p = field.kind.exact_flow_map(&q.x, q.t, tau * i as f64 / 16.0).unwrap();
            p.iter().enumerate().all(|(a, v)| (d.lo[a]..=d.hi[a]).contains(v))
        })
    };
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        out.extend(random_queries(rng, &d, t0, tau, count).into_iter().filter(inside));
    }
    out.truncate(count);
    out
}

fn analytic_end_to_end() -> Result<Verdict> {
    let mut parts = Vec::new();
    let mut pass = true;
    for (preset, bound) in [(Preset::Constant, 1e-3), (Preset::Rotation, 1e-2)] {
        let start = Instant::now();
        let cfg = preset.config().resolve()?;
        let a = cfg.field.analytic.clone().unwrap();
        let src: VectorFieldSource = a.clone().into();
        let (model, _) = train(&src, &cfg.model, &cfg.train, false)?;
        let exact = FlowMapProvider::exact(&a)?;
        let neural = FlowMapProvider::neural(&model, cfg.analysis.policy);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut worst = 0.0f64;
        for &t0 in &cfg.analysis.sweep.start_times {
            for g in [6.0, 12.0, 24.0] {
                let queries = contained_queries(&a, t0, a.grid_units().to_physical(g), 500, &mut rng);
                worst = worst.max(flow_map_error(&neural, &exact, &queries)?.mean_err);
            }
        }
        let secs = start.elapsed().as_secs();
        pass &= worst <= bound && secs < 600;
        parts.push(format!("{preset:?} worst cell {worst:.2e} (<= {bound:.0e}) in {secs} s"));
    }
    verdict(pass, parts.join("; "))
}

struct Desk {
    cfg: RunConfig,
    src: VectorFieldSource,
    model: NifmModel,
    report: TrainReport,
    train_secs: f64,
    spans: Vec<f64>,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| {
        let cfg = Preset::DoubleGyreDesk.config().resolve().unwrap();
        let start = Instant::now();
        let src = cfg.field.load().unwrap();
        let (model, report) = train(&src, &cfg.model, &cfg.train, false).unwrap();
        let train_secs = start.elapsed().as_secs_f64();
        let spans = cfg.analysis.sweep.spans.iter().map(|&g| src.grid_units().to_physical(g)).collect();
        Desk {
            cfg,
            src,
            model,
            report,
            train_secs,
            spans,
        }
    })
}

fn desk_sweep(model: &NifmModel, policy: StepPolicy) -> Result<Vec<ErrorRecord>> {
    let d = desk();
    let oracle = FlowMapProvider::oracle(&d.src, d.cfg.oracle_spec(&d.src));
    let s = &d.cfg.analysis.sweep;
    evaluation_sweep(&FlowMapProvider::neural(model, policy), &oracle, &s.start_times, &d.spans, s.samples, 7)
}

fn desk_self_sweep() -> &'static Vec<ErrorRecord> {
    static SWEEP: OnceLock<Vec<ErrorRecord>> = OnceLock::new();
    SWEEP.get_or_init(|| desk_sweep(&desk().model, desk().cfg.analysis.policy).unwrap())
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>().join(" ")
}

fn double_gyre_sweep() -> Result<Verdict> {
    let d = desk();
    let start = Instant::now();
    let records = desk_self_sweep();
    let total = d.train_secs + start.elapsed().as_secs_f64();
    let worst = worst_cell(records);
    verdict(
        worst <= 2e-2 && total < 45.0 * 60.0,
        format!(
            "{} params, per-span mean {} (worst cell {worst:.2e} <= 2e-2), train+sweep {total:.0} s",
            d.model.param_count(),
            fmt_list(&per_span(records, &d.spans))
        ),
    )
}

fn training_progress() -> Result<Verdict> {
    let r = &desk().report;
    let (s1, s2) = (&r.stages[0], &r.stages[1]);
    let r1 = s1.final_loss / s1.initial_loss;
    let r2 = s2.smoothed_final / s2.initial_loss;
    verdict(
        r1 <= 0.2 && r2 <= 0.1,
        format!(
            "stage1 {:.3e} -> {:.3e} ({r1:.3} <= 0.2); stage2 {:.3e} -> smoothed {:.3e} ({r2:.3} <= 0.1)",
            s1.initial_loss, s1.final_loss, s2.initial_loss, s2.smoothed_final
        ),
    )
}

fn ftle_sanity() -> Result<Verdict> {
    let constant = Preset::Constant.config().field.analytic.unwrap();
    let saddle = Preset::Saddle.config().field.analytic.unwrap();
    let spec = |f: &AnalyticField| nifm::oracle::IntegratorSpec::default_for(f.grid_units());
    let c = ftle(&FlowMapProvider::oracle(&constant, spec(&constant)), 0.0, 2.0, &[64, 32], None)?;
    let c_max = c.values.iter().map(|v| v.abs()).fold(0.0f32, f32::max) as f64;
    let s = ftle(&FlowMapProvider::oracle(&saddle, spec(&saddle)), 0.0, 2.0, &[64, 64], None)?;
    let s_dev = s.values.iter().map(|v| (*v as f64 - 0.5).abs()).fold(0.0, f64::max);

    let d = desk();
    let f = &d.cfg.analysis.ftle;
    let oracle = ftle(&FlowMapProvider::oracle(&d.src, d.cfg.oracle_spec(&d.src)), f.t0, f.tau, &f.res, f.h_fd)?;
    let neural = ftle(&FlowMapProvider::neural(&d.model, d.cfg.analysis.policy), f.t0, f.tau, &f.res, f.h_fd)?;
    let (lo, hi) = oracle.min_max();
    let mad = neural
        .values
        .iter()
        .zip(&oracle.values)
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / oracle.values.len() as f64;
    let frac = mad / (hi - lo) as f64;
    verdict(
        c_max <= 1e-6 && s_dev <= 1e-3 && frac <= 0.05,
        format!(
            "constant max {c_max:.1e} (<= 1e-6); saddle max |σ-0.5| {s_dev:.1e} (<= 1e-3); \
             double gyre mean |neural-oracle| {mad:.4} = {:.2}% of range {lo:.3}..{hi:.3} (<= 5%)",
            100.0 * frac
        ),
    )
}

fn mean_error(records: &[ErrorRecord]) -> f64 {
    records.iter().map(|r| r.mean_err).sum::<f64>() / records.len() as f64
}

fn supervision_parity() -> Result<Verdict> {
    let d = desk();
    let start = Instant::now();
    let cfg = &d.cfg.train;
    let voxel = d.src.grid_units().voxel;
    let spec = d.cfg.oracle_spec(&d.src);
    let range = (cfg.stage2.tau_min * voxel, cfg.stage2.tau_max * voxel);
    let data = sample_flow_map_dataset(&d.src, 100_000, range, &spec, cfg.seed ^ 0x5a5a)?;
    let (model, _) = train_stage1(build_model(&d.src, &d.cfg.model, cfg)?, &d.src, cfg)?;
    let (supervised, _) = train_flowmap_supervised(model, &data, cfg)?;
    let sup = mean_error(&desk_sweep(&supervised, d.cfg.analysis.policy)?);
    let own = mean_error(desk_self_sweep());
    let secs = d.train_secs + start.elapsed().as_secs_f64();
    verdict(
        own <= 1.5 * sup && secs < 90.0 * 60.0,
        format!(
            "self-consistency {own:.3e} vs supervised {sup:.3e}: ratio {:.2} (<= 1.5), {secs:.0} s",
            own / sup
        ),
    )
}

fn policy_robustness() -> Result<Verdict> {
    let d = desk();
    let mut table = Vec::new();
    for policy in StepPolicy::ALL {
        table.push((policy, per_span(&desk_sweep(&d.model, policy)?, &d.spans)));
    }
    let mut worst = 0.0f64;
    for i in 0..d.spans.len() {
        let col: Vec<f64> = table.iter().map(|(_, v)| v[i]).collect();
        let hi = col.iter().copied().fold(0.0, f64::max);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        worst = worst.max(hi / lo);
    }
    let rows: Vec<String> = table.iter().map(|(p, v)| format!("{} {}", p.name(), fmt_list(v))).collect();
    verdict(worst <= 2.0, format!("max/min per span {worst:.2} (<= 2); {}", rows.join("; ")))
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_nifm"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Result<Verdict> {
    let dir = tempfile::tempdir().map_err(|e| nifm::error::Error::InvalidArgument(e.to_string()))?;
    let cfg = r#"{"train": {"batch_size": 256, "stage1": {"steps": 200, "decay_every": 100},
                  "stage2": {"steps": 100, "decay_every": 50}, "smooth_window": 20},
                  "analysis": {"sweep": {"samples": 200}}}"#;
    std::fs::write(dir.path().join("small.json"), cfg).unwrap();
    let mut ok = true;
    for out in ["a", "b"] {
        for cmd in ["train", "eval"] {
            ok &= run_cli(
                dir.path(),
                &["--config", "small.json", "--threads", "1", "--seed", "11", "--out", out, cmd],
            );
        }
    }
    if !ok {
        return verdict(false, "a CLI run failed");
    }
    let files = ["model.ckpt", "sweep_neural.csv", "loss_stage1.csv", "loss_stage2.csv"];
    let differing: Vec<&str> = files
        .iter()
        .copied()
        .filter(|f| std::fs::read(dir.path().join("a").join(f)).ok() != std::fs::read(dir.path().join("b").join(f)).ok())
        .collect();
    verdict(
        differing.is_empty(),
        format!("compared {}; differing: {differing:?}", files.join(" ")),
    )
}

fn main() {
    let selected: Option<Vec<u32>> = std::env::var("NIFM_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    let mut failed = 0;
    for c in criteria() {
        if selected.as_ref().is_some_and(|s| !s.contains(&c.id)) {
            continue;
        }
        if (8..=11).contains(&c.id) {
            // the shared model's training is timed under criterion 7
            let _ = std::panic::catch_unwind(desk);
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run);
        let elapsed = start.elapsed();
        let (pass, detail) = match outcome {
            Ok(Ok(v)) => (v.pass, v.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".into()),
        };
        let in_budget = elapsed <= c.budget;
        let pass = pass && in_budget;
        if !pass {
            failed += 1;
        }
        let budget = if in_budget { String::new() } else { format!(" over budget {:?}", c.budget) };
        println!(
            "{} criterion {:>2} {}: {detail} [{:.1} s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            c.id,
            c.name,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
