use std::fmt::Write as _;
use std::path::Path;

use super::manifest::Run;
use crate::analysis::{
    comparison_csv, convergence_slope, emit_scalar_image, euler_rk4_model_comparison, evaluation_sweep, ftle,
    streak_csv, streaklines, sweep_csv, FlowMapProvider, ImageRange, ScalarGrid,
};
use crate::error::{Error, Result};
use crate::field::{rasterize, save_grid, VectorField, VectorFieldSource};
use crate::grad::{check_stage_losses, toy_model};
use crate::model::{load_checkpoint, save_checkpoint, NifmModel, Normalization};
use crate::oracle::{integrate, load_samples, sample_flow_map_dataset, save_samples, FlowQuery};
use crate::train::{build_model, train_flowmap_supervised, train_stage1, train_stage2, TrainReport};

fn model_for(run: &Run, src: &VectorFieldSource, checkpoint: Option<&Path>) -> Result<NifmModel> {
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| run.path("model.ckpt"));
    let model = load_checkpoint(&path)?;
    if model.dim() != src.dim() {
        return Err(Error::DimensionMismatch {
            expected: src.dim(),
            got: model.dim(),
        });
    }
    Ok(model)
}

pub fn rasterize_cmd(run: &mut Run, res: Option<&[usize]>) -> Result<()> {
    let f = &run.cfg.field;
    let Some(a) = &f.analytic else {
        return Err(Error::Config("rasterize needs an analytic field".into()));
    };
    let mut dims = f.rasterize.clone().unwrap_or_else(|| {
        let mut d = vec![a.time_nodes];
        d.extend(std::iter::repeat_n(64, a.domain.n));
        d
    });
    if let Some(r) = res {
        if r.len() != dims.len() - 1 {
            return Err(Error::Config(format!("--res needs {} spatial sizes", dims.len() - 1)));
        }
        dims[1..].copy_from_slice(r);
    }
    let grid = rasterize(a, &dims)?;
    let path = run.path("field.grid");
    save_grid(&grid, &path)?;
    run.record(&path);
    let bytes = std::fs::metadata(&path).map_err(|e| Error::io(&path, e))?.len();
    println!("{} {bytes}", path.display());
    Ok(())
}

pub struct TrainArgs<'a> {
    pub stage1_only: bool,
    pub resume: Option<&'a Path>,
    pub supervised: Option<&'a Path>,
}

pub fn train_cmd(run: &mut Run, args: TrainArgs) -> Result<()> {
    let src = run.cfg.field.load()?;
    let cfg = run.cfg.train.clone();
    let mut report = TrainReport::new(cfg.clone());
    let mut model = match args.resume {
        Some(path) => {
            let m = model_for(run, &src, Some(path))?;
            println!("resuming from {}", path.display());
            m
        }
        None => {
            let m = build_model(&src, &run.cfg.model, &cfg)?;
            println!("model: {} parameters, resolutions {:?}", m.param_count(), m.arch.resolutions);
            let (m, s1) = train_stage1(m, &src, &cfg)?;
            println!("stage1: loss {:.4e} -> {:.4e} in {} ms", s1.initial_loss, s1.final_loss, s1.wall_ms);
            report.stages.push(s1);
            m
        }
    };
    if !args.stage1_only {
        let (m, s) = match args.supervised {
            Some(path) => train_flowmap_supervised(model, &load_samples(path)?, &cfg)?,
            None => train_stage2(model, &cfg)?,
        };
        println!("{}: loss {:.4e} -> {:.4e} in {} ms", s.stage, s.initial_loss, s.final_loss, s.wall_ms);
        report.stages.push(s);
        model = m;
    }
    let ckpt = run.path("model.ckpt");
    save_checkpoint(&model, &ckpt)?;
    run.record(&ckpt);
    report.checkpoint = Some(ckpt);
    let json = run.path("train_report.json");
    report.save_json(&json)?;
    run.record(&json);
    for p in report.save_traces(&run.out)? {
        run.record(&p);
    }
    Ok(())
}

pub fn eval_cmd(run: &mut Run, checkpoint: Option<&Path>, use_oracle: bool) -> Result<()> {
    let src = run.cfg.field.load()?;
    let spec = run.cfg.oracle_spec(&src);
    let reference = FlowMapProvider::oracle(&src, spec);
    let model;
    let provider = if use_oracle {
        reference
    } else {
        model = model_for(run, &src, checkpoint)?;
        FlowMapProvider::neural(&model, run.cfg.analysis.policy)
    };
    let s = &run.cfg.analysis.sweep;
    let units = src.grid_units();
    let spans: Vec<f64> = s.spans.iter().map(|&g| units.to_physical(g)).collect();
    let records = evaluation_sweep(&provider, &reference, &s.start_times, &spans, s.samples, run.cfg.sweep_seed())?;
    for r in &records {
        println!("t0 {:<8} tau {:<10.4} mean {:.4e} max {:.4e}", r.t0, r.tau, r.mean_err, r.max_err);
    }
    let name = format!("sweep_{}.csv", provider.name());
    run.write(&name, sweep_csv(&records, !run.strict).as_bytes())?;
    Ok(())
}

pub struct SpanArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub oracle: bool,
    pub t0: Option<f64>,
    pub tau: Option<f64>,
    pub res: Option<Vec<usize>>,
}

fn emit_ftle(run: &mut Run, grid: &ScalarGrid, name: &str, range: ImageRange) -> Result<()> {
    run.write(&format!("ftle_{name}.csv"), grid.to_csv().as_bytes())?;
    let image = if grid.dims.len() == 3 {
        grid.slice_z(run.cfg.analysis.ftle.slice.unwrap_or(grid.dims[2] / 2))?
    } else {
        grid.clone()
    };
    let path = run.path(&format!("ftle_{name}.pgm"));
    emit_scalar_image(&image, &path, range)?;
    run.record(&path);
    let (lo, hi) = grid.min_max();
    println!("ftle {name}: [{lo}, {hi}] -> {}", path.display());
    Ok(())
}

/// With `--oracle` only the oracle field is computed; otherwise the neural
/// field and the oracle field are written side by side on the same range.
pub fn ftle_cmd(run: &mut Run, args: SpanArgs) -> Result<()> {
    let src = run.cfg.field.load()?;
    let f = run.cfg.analysis.ftle.clone();
    let (t0, tau) = (args.t0.unwrap_or(f.t0), args.tau.unwrap_or(f.tau));
    let res = args.res.unwrap_or(f.res);
    let oracle = FlowMapProvider::oracle(&src, run.cfg.oracle_spec(&src));
    let reference = ftle(&oracle, t0, tau, &res, f.h_fd)?;
    let range = match f.range {
        Some([lo, hi]) => ImageRange::Fixed(lo, hi),
        None => ImageRange::Auto,
    };
    if args.oracle {
        return emit_ftle(run, &reference, "oracle", range);
    }
    let model = model_for(run, &src, args.checkpoint)?;
    let neural = ftle(&FlowMapProvider::neural(&model, run.cfg.analysis.policy), t0, tau, &res, f.h_fd)?;
    let shared = match range {
        ImageRange::Auto => {
            let (lo, hi) = reference.min_max();
            if lo < hi {
                ImageRange::Fixed(lo as f64, hi as f64)
            } else {
                ImageRange::Auto
            }
        }
        fixed => fixed,
    };
    emit_ftle(run, &neural, "neural", shared)?;
    emit_ftle(run, &reference, "oracle", shared)?;
    let mad = neural
        .values
        .iter()
        .zip(&reference.values)
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / neural.values.len() as f64;
    println!("mean |neural - oracle| = {mad:.4e}");
    Ok(())
}

pub fn streak_cmd(run: &mut Run, checkpoint: Option<&Path>, use_oracle: bool, t_obs: Option<f64>) -> Result<()> {
    let src = run.cfg.field.load()?;
    let s = run.cfg.analysis.streak.clone();
    let t_obs = t_obs.unwrap_or(s.t_obs);
    let seed = s.seed.unwrap_or_else(|| src.domain().center());
    let releases: Vec<f64> = if s.releases == 1 {
        vec![t_obs]
    } else {
        (0..s.releases)
            .map(|i| s.t_first + (t_obs - s.t_first) * i as f64 / (s.releases - 1) as f64)
            .collect()
    };
    let model;
    let provider = if use_oracle {
        FlowMapProvider::oracle(&src, run.cfg.oracle_spec(&src))
    } else {
        model = model_for(run, &src, checkpoint)?;
        FlowMapProvider::neural(&model, run.cfg.analysis.policy)
    };
    let line = streaklines(&provider, &seed, &releases, t_obs)?;
    let path = run.write(&format!("streak_{}.csv", provider.name()), streak_csv(&line, src.dim()).as_bytes())?;
    println!("{} vertices -> {}", line.len(), path.display());
    Ok(())
}

pub struct OracleArgs {
    pub x: Option<Vec<f64>>,
    pub t0: Option<f64>,
    pub tau: Option<f64>,
    pub samples: Option<usize>,
}

/// A single reference query, or with `samples` a flow-map sample set over
/// the stage-2 span range.
pub fn oracle_cmd(run: &mut Run, args: OracleArgs) -> Result<()> {
    let src = run.cfg.field.load()?;
    let spec = run.cfg.oracle_spec(&src);
    if let Some(count) = args.samples {
        let count = if count == 0 { run.cfg.analysis.oracle_samples } else { count };
        let voxel = src.grid_units().voxel;
        let s2 = &run.cfg.train.stage2;
        let set = sample_flow_map_dataset(&src, count, (s2.tau_min * voxel, s2.tau_max * voxel), &spec, run.cfg.sweep_seed())?;
        let path = run.path("samples.fms");
        save_samples(&set, &path)?;
        run.record(&path);
        println!("{} samples -> {}", set.len(), path.display());
        return Ok(());
    }
    let q = &run.cfg.analysis.query;
    let x = args.x.or_else(|| q.x.clone()).unwrap_or_else(|| src.domain().center());
    let query = FlowQuery::new(x, args.t0.unwrap_or(q.t0), args.tau.unwrap_or(q.tau));
    let end = integrate(&src, &query, &spec)?;
    let n = src.dim();
    let axes = ["x", "y", "z"];
    let mut csv = String::new();
    let header: Vec<String> = axes[..n]
        .iter()
        .map(|a| a.to_string())
        .chain(["t".into(), "tau".into()])
        .chain(axes[..n].iter().map(|a| format!("end_{a}")))
        .collect();
    let _ = writeln!(csv, "{}", header.join(","));
    let values: Vec<String> = query
        .x
        .iter()
        .chain([&query.t, &query.tau])
        .chain(&end)
        .map(|v| v.to_string())
        .collect();
    let _ = writeln!(csv, "{}", values.join(","));
    run.write("oracle_query.csv", csv.as_bytes())?;
    println!("{:?} -> {end:?}", query.x);
    Ok(())
}

pub fn check_grad_cmd(run: &mut Run) -> Result<()> {
    let src = run.cfg.field.load()?;
    let units = src.grid_units();
    let norm = Normalization {
        domain: *src.domain(),
        tau_max: run.cfg.train.stage2.tau_max * units.voxel,
        voxel: units.voxel,
    };
    let c = run.cfg.analysis.check_grad.clone();
    let seed = run.cfg.sweep_seed();
    let model = toy_model(norm, seed)?;
    let rows = check_stage_losses(&model, &src, c.rows, seed, c.rel)?;
    let mut csv = String::from("loss,tensor,entries,max_rel_err\n");
    let mut worst = 0.0f64;
    for (loss, r) in &rows {
        let _ = writeln!(csv, "{loss},{},{},{:e}", r.tensor, r.entries, r.max_rel_err);
        println!("{loss:<7} {:<14} {:>6} {:.3e}", r.tensor, r.entries, r.max_rel_err);
        worst = worst.max(r.max_rel_err);
    }
    run.write("check_grad.csv", csv.as_bytes())?;
    if worst > c.tol {
        return Err(Error::InvalidArgument(format!(
            "gradient check failed: worst relative error {worst:e} exceeds {:e}",
            c.tol
        )));
    }
    Ok(())
}

pub fn compare_cmd(run: &mut Run, checkpoint: Option<&Path>) -> Result<()> {
    let Some(a) = run.cfg.field.analytic.clone() else {
        return Err(Error::Config("compare needs an analytic field with a closed-form flow map".into()));
    };
    let model = match checkpoint {
        Some(p) => Some(model_for(run, &a.clone().into(), Some(p))?),
        None => None,
    };
    let c = run.cfg.analysis.compare.clone();
    let rows = euler_rk4_model_comparison(&a, model.as_ref(), &c.step_sizes, &c.ks, &c.taus, c.samples, run.cfg.sweep_seed())?;
    for &tau in &c.taus {
        for method in ["euler", "rk4"] {
            if let Some(s) = convergence_slope(&rows, method, tau) {
                println!("tau {tau}: {method} log-log slope {s:.3}");
            }
        }
    }
    run.write("compare.csv", comparison_csv(&rows).as_bytes())?;
    Ok(())
}
