//! The `nifm` command line: one subcommand per activity, a layered JSON
//! configuration, and a manifest per run.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 configuration or usage error,
//! 3 training divergence.

mod commands;
mod config;
mod manifest;

pub use config::{
    config_keys_help, config_schema, merge, AnalysisConfig, CheckGradConfig, CompareConfig, FieldConfig,
    FtleConfig, Preset, QueryConfig, RunConfig, StreakConfig, SweepConfig,
};
pub use manifest::{version_string, Artifact, HostInfo, Run, RunManifest};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::error::{Error, Result};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Infeasible(_) => EXIT_CONFIG,
        Error::Diverged { .. } | Error::NonFiniteTensor(_) => EXIT_DIVERGED,
        _ => EXIT_RUNTIME,
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, sep: char) -> std::result::Result<Vec<T>, String> {
    s.split(sep)
        .map(|p| p.trim().parse::<T>().map_err(|_| format!("bad value {p:?} in {s:?}")))
        .collect()
}

/// Node counts written `WxH` or `WxHxD`.
#[derive(Debug, Clone)]
pub struct Dims(pub Vec<usize>);

/// A position written `x,y` or `x,y,z`.
#[derive(Debug, Clone)]
pub struct Point(pub Vec<f64>);

fn parse_res(s: &str) -> std::result::Result<Dims, String> {
    let v: Vec<usize> = parse_list(s, 'x')?;
    if !(2..=3).contains(&v.len()) || v.iter().any(|&d| d < 2) {
        return Err(format!("expected WxH or WxHxD with sizes >= 2, got {s:?}"));
    }
    Ok(Dims(v))
}

fn parse_point(s: &str) -> std::result::Result<Point, String> {
    parse_list(s, ',').map(Point)
}

#[derive(Debug, Parser)]
#[command(name = "nifm", version, about = "Integration-free neural flow maps")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON configuration layered over the preset.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output_dir).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for training and sweeps (overrides seed).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 selects strict mode with byte-identical artifacts.
    #[arg(long, global = true, env = "NIFM_THREADS")]
    pub threads: Option<usize>,
    /// Base configuration.
    #[arg(long, global = true, value_enum, default_value = "double-gyre-desk")]
    pub preset: Preset,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the analytic field onto a grid and write `field.grid`.
    Rasterize {
        /// Spatial node counts, e.g. 64x32.
        #[arg(long, value_parser = parse_res)]
        res: Option<Dims>,
    },
    /// Run both training stages and write the checkpoint, report and loss traces.
    Train {
        #[arg(long)]
        stage1_only: bool,
        /// Continue from a stage-1 checkpoint with the second stage.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Replace the self-consistency stage with supervision on an oracle sample set.
        #[arg(long)]
        supervised: Option<PathBuf>,
    },
    /// Error sweep against the reference integrator.
    Eval {
        /// Checkpoint to evaluate (default: <out>/model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate the reference integrator itself.
        #[arg(long)]
        oracle: bool,
    },
    /// FTLE field as PGM image plus CSV.
    Ftle {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        t0: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        tau: Option<f64>,
        #[arg(long, value_parser = parse_res)]
        res: Option<Dims>,
    },
    /// Streakline from a fixed release point.
    Streak {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
        /// Observation time.
        #[arg(long)]
        t_obs: Option<f64>,
    },
    /// Reference integration of one query, or a flow-map sample set.
    Oracle {
        /// Start position, comma separated.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        x: Option<Point>,
        #[arg(long)]
        t0: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        tau: Option<f64>,
        /// Write `samples.fms` with this many records (0: analysis.oracle_samples).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Finite-difference check of both stage losses on a toy model.
    CheckGrad,
    /// Euler/RK4 (and optionally model) error against the closed-form flow map.
    Compare {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the JSON Schema of the configuration.
    Schema,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Rasterize { .. } => "rasterize",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ftle { .. } => "ftle",
            Command::Streak { .. } => "streak",
            Command::Oracle { .. } => "oracle",
            Command::CheckGrad => "check-grad",
            Command::Compare { .. } => "compare",
            Command::Schema => "schema",
        }
    }
}

fn configure_threads(threads: Option<usize>) {
    if let Some(n) = threads.filter(|&n| n > 0) {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let base = cli.preset.config();
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::layered(&base, path)?,
        None => base,
    };
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.resolve()
}

pub fn execute(cli: Cli) -> Result<()> {
    configure_threads(cli.threads);
    if let Command::Schema = cli.command {
        print!("{}", config_schema());
        return Ok(());
    }
    let cfg = resolve(&cli)?;
    let strict = cli.threads == Some(1);
    let mut run = Run::new(cli.command.name(), cfg, strict);
    match cli.command {
        Command::Rasterize { res } => commands::rasterize_cmd(&mut run, res.as_ref().map(|d| d.0.as_slice()))?,
        Command::Train {
            stage1_only,
            resume,
            supervised,
        } => commands::train_cmd(
            &mut run,
            commands::TrainArgs {
                stage1_only,
                resume: resume.as_deref(),
                supervised: supervised.as_deref(),
            },
        )?,
        Command::Eval { checkpoint, oracle } => commands::eval_cmd(&mut run, checkpoint.as_deref(), oracle)?,
        Command::Ftle {
            checkpoint,
            oracle,
            t0,
            tau,
            res,
        } => commands::ftle_cmd(
            &mut run,
            commands::SpanArgs {
                checkpoint: checkpoint.as_deref(),
                oracle,
                t0,
                tau,
                res: res.map(|d| d.0),
            },
        )?,
        Command::Streak {
            checkpoint,
            oracle,
            t_obs,
        } => commands::streak_cmd(&mut run, checkpoint.as_deref(), oracle, t_obs)?,
        Command::Oracle { x, t0, tau, samples } => {
            commands::oracle_cmd(&mut run, commands::OracleArgs {
                    x: x.map(|p| p.0),
                    t0,
                    tau,
                    samples,
                })?
        }
        Command::CheckGrad => commands::check_grad_cmd(&mut run)?,
        Command::Compare { checkpoint } => commands::compare_cmd(&mut run, checkpoint.as_deref())?,
        Command::Schema => unreachable!(),
    }
    let manifest = run.finish()?;
    println!("manifest: {}", manifest.display());
    Ok(())
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let command = Cli::command().after_long_help(config_keys_help());
    let cli = match command
        .try_get_matches_from(args)
        .and_then(|m| Cli::from_arg_matches(&m))
    {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
