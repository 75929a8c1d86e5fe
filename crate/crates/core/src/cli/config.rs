use std::path::{Path, PathBuf};

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::field::{load_grid, rasterize, AnalyticField, AnalyticKind, Domain, VectorFieldSource};
use crate::model::{InitConfig, StepPolicy};
use crate::oracle::IntegratorSpec;
use crate::train::TrainConfig;

/// Where the vector field comes from. Exactly one of `analytic` and `grid`
/// is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub analytic: Option<AnalyticField>,
    /// Gridded field file.
    pub grid: Option<PathBuf>,
    /// Node counts `[t, x, y(, z)]`; when set, `analytic` is rasterized and
    /// the gridded copy is used everywhere.
    pub rasterize: Option<Vec<usize>>,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            analytic: Some(AnalyticField::double_gyre(64)),
            grid: None,
            rasterize: Some(vec![64, 64, 32]),
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        match (&self.analytic, &self.grid) {
            (Some(a), None) => {
                AnalyticField::new(a.kind.clone(), a.domain, a.time_nodes)?;
                if let Some(dims) = &self.rasterize {
                    if dims.len() != a.domain.n + 1 || dims.iter().any(|&d| d < 2) {
                        return Err(Error::Config(format!(
                            "field.rasterize {dims:?} needs {} axes of at least 2 nodes",
                            a.domain.n + 1
                        )));
                    }
                }
                Ok(())
            }
            (None, Some(_)) if self.rasterize.is_some() => {
                Err(Error::Config("field.rasterize applies to analytic fields only".into()))
            }
            (None, Some(_)) => Ok(()),
            _ => Err(Error::Config(
                "field needs exactly one of `analytic` and `grid`".into(),
            )),
        }
    }

    /// The source training and analyses run against.
    pub fn load(&self) -> Result<VectorFieldSource> {
        self.validate()?;
        match (&self.analytic, &self.grid, &self.rasterize) {
            (Some(a), _, Some(dims)) => Ok(rasterize(a, dims)?.into()),
            (Some(a), _, None) => Ok(a.clone().into()),
            (None, Some(path), _) => Ok(load_grid(path)?.into()),
            _ => unreachable!(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub start_times: Vec<f64>,
    /// Spans in temporal voxels.
    pub spans: Vec<f64>,
    pub samples: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            start_times: vec![0.0, 3.0, 6.0],
            spans: vec![6.0, 12.0, 24.0],
            samples: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct FtleConfig {
    pub t0: f64,
    /// Physical time span.
    pub tau: f64,
    /// Output node counts `[x, y(, z)]`.
    pub res: Vec<usize>,
    /// Seed offset; half an output cell when absent.
    pub h_fd: Option<f64>,
    /// Fixed gray-scale range `[lo, hi]`; min-max when absent.
    pub range: Option<[f64; 2]>,
    /// z index imaged for 3D fields; the middle slice when absent.
    pub slice: Option<usize>,
}

impl Default for FtleConfig {
    fn default() -> Self {
        FtleConfig {
            t0: 0.0,
            tau: 10.0,
            res: vec![128, 64],
            h_fd: None,
            range: None,
            slice: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct StreakConfig {
    /// Release point; the domain center when absent.
    pub seed: Option<Vec<f64>>,
    pub t_obs: f64,
    pub t_first: f64,
    pub releases: usize,
}

impl Default for StreakConfig {
    fn default() -> Self {
        StreakConfig {
            seed: None,
            t_obs: 8.0,
            t_first: 0.0,
            releases: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub step_sizes: Vec<f64>,
    pub ks: Vec<usize>,
    pub taus: Vec<f64>,
    pub samples: usize,
}

impl Default for CompareConfig {
    fn default() -> Self {
        CompareConfig {
            step_sizes: vec![0.1, 0.05, 0.025, 0.0125],
            ks: (1..=8).collect(),
            taus: vec![1.0],
            samples: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct QueryConfig {
    /// Start position; the domain center when absent.
    pub x: Option<Vec<f64>>,
    pub t0: f64,
    pub tau: f64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        QueryConfig {
            x: None,
            t0: 0.0,
            tau: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct CheckGradConfig {
    pub rows: usize,
    /// Relative finite-difference step.
    pub rel: f64,
    /// Largest accepted per-tensor relative error.
    pub tol: f64,
}

impl Default for CheckGradConfig {
    fn default() -> Self {
        CheckGradConfig {
            rows: 24,
            rel: 1e-3,
            tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Composition policy of the neural provider.
    pub policy: StepPolicy,
    /// Reference integrator; RK4 at half a temporal voxel when absent.
    pub oracle: Option<IntegratorSpec>,
    pub sweep: SweepConfig,
    pub ftle: FtleConfig,
    pub streak: StreakConfig,
    pub compare: CompareConfig,
    pub query: QueryConfig,
    pub check_grad: CheckGradConfig,
    /// Size of the oracle sample set written by `oracle --samples 0`.
    pub oracle_samples: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            policy: StepPolicy::default(),
            oracle: None,
            sweep: SweepConfig::default(),
            ftle: FtleConfig::default(),
            streak: StreakConfig::default(),
            compare: CompareConfig::default(),
            query: QueryConfig::default(),
            check_grad: CheckGradConfig::default(),
            oracle_samples: 100_000,
        }
    }
}

/// The whole run description. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub field: FieldConfig,
    pub model: InitConfig,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
    pub output_dir: PathBuf,
    /// Overrides `train.seed` and seeds the sweeps when set.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Preset::DoubleGyreDesk.config()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    DoubleGyreDesk,
    Constant,
    Rotation,
    Saddle,
}

/// The double-gyre schedule: stage 2 runs three times longer than the
/// generic desk schedule and composes its targets one voxel per step.
fn double_gyre_train() -> TrainConfig {
    let mut t = TrainConfig::desk();
    t.stage2.steps = 12_000;
    t.stage2.decay_every = 2_400;
    t.stage2.policy = StepPolicy::Full;
    t
}

fn small_analytic(kind: AnalyticKind, lo: f64, hi: [f64; 2]) -> RunConfig {
    let domain = Domain::new(&[lo, lo], &hi, 0.0, 10.0).unwrap();
    let mut train = TrainConfig::desk();
    train.stage1.steps = 2_000;
    train.stage1.decay_every = 400;
    RunConfig {
        field: FieldConfig {
            analytic: Some(AnalyticField::new(kind, domain, 64).unwrap()),
            grid: None,
            rasterize: None,
        },
        model: InitConfig {
            base_res: Some(vec![4, 4, 4]),
            ..InitConfig::default()
        },
        train,
        analysis: AnalysisConfig {
            ftle: FtleConfig {
                tau: 2.0,
                res: vec![64, 64],
                ..FtleConfig::default()
            },
            sweep: SweepConfig {
                start_times: vec![0.0, 3.0],
                ..SweepConfig::default()
            },
            ..AnalysisConfig::default()
        },
        output_dir: PathBuf::from("out"),
        seed: None,
    }
}

impl Preset {
    pub fn config(self) -> RunConfig {
        match self {
            Preset::DoubleGyreDesk => RunConfig {
                field: FieldConfig::default(),
                model: InitConfig {
                    compression_ratio: 2.0,
                    ..InitConfig::default()
                },
                train: double_gyre_train(),
                analysis: AnalysisConfig::default(),
                output_dir: PathBuf::from("out"),
                seed: None,
            },
            Preset::Constant => {
                let kind = AnalyticKind::Constant { c: vec![0.05, -0.02] };
                small_analytic(kind, 0.0, [2.0, 1.0])
            }
            Preset::Rotation => small_analytic(AnalyticKind::RigidRotation { omega: 0.5 }, -1.0, [1.0, 1.0]),
            Preset::Saddle => small_analytic(AnalyticKind::Saddle { lambda: 0.5 }, -1.0, [1.0, 1.0]),
        }
    }
}

/// Overlays `over` onto `base`: objects merge key by key, anything else is
/// replaced. A `field` section naming a source (`analytic` or `grid`)
/// replaces the base field section whole, and objects whose `kind` tag
/// changes are replaced rather than merged.
pub fn merge(base: &mut Value, over: Value) {
    merge_at(base, over, true);
}

fn merge_at(base: &mut Value, over: Value, top: bool) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                let replace_field = top
                    && k == "field"
                    && v.as_object().is_some_and(|f| f.contains_key("analytic") || f.contains_key("grid"));
                match b.get_mut(&k) {
                    Some(slot) if !replace_field && !retagged(slot, &v) => merge_at(slot, v, false),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn retagged(base: &Value, over: &Value) -> bool {
    match (base.get("kind"), over.get("kind")) {
        (Some(a), Some(b)) => a != b,
        _ => false,
    }
}

impl RunConfig {
    /// `base` overlaid with the JSON document at `path`.
    pub fn layered(base: &RunConfig, path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let over: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if !over.is_object() {
            return Err(Error::Config(format!("{}: expected a JSON object", path.display())));
        }
        let mut merged = serde_json::to_value(base)?;
        merge(&mut merged, over);
        serde_json::from_value(merged).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Checks cross-section consistency and applies the top-level seed.
    pub fn resolve(mut self) -> Result<RunConfig> {
        if let Some(seed) = self.seed {
            self.train.seed = seed;
        }
        self.field.validate()?;
        self.train.validate()?;
        let a = &self.analysis;
        if a.sweep.samples == 0 || a.compare.samples == 0 || a.check_grad.rows == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if a.streak.releases == 0 || a.streak.t_first > a.streak.t_obs {
            return Err(Error::Config(
                "analysis.streak needs releases > 0 and t_first <= t_obs".into(),
            ));
        }
        Ok(self)
    }

    pub fn sweep_seed(&self) -> u64 {
        self.seed.unwrap_or(self.train.seed)
    }

    pub fn oracle_spec(&self, src: &VectorFieldSource) -> IntegratorSpec {
        self.analysis
            .oracle
            .unwrap_or_else(|| IntegratorSpec::default_for(src.grid_units()))
    }
}

/// `key = default` lines for every configuration key, dotted by section.
pub fn config_keys_help() -> String {
    let mut lines = Vec::new();
    flatten("", &serde_json::to_value(RunConfig::default()).unwrap(), &mut lines);
    let mut out = String::from("Configuration keys (defaults of the double-gyre-desk preset):\n");
    for l in lines {
        out.push_str("  ");
        out.push_str(&l);
        out.push('\n');
    }
    out
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(map) if !map.is_empty() && !map.contains_key("kind") => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}

/// JSON Schema of [`RunConfig`].
pub fn config_schema() -> String {
    let schema = schemars::schema_for!(RunConfig);
    serde_json::to_string_pretty(&schema).unwrap() + "\n"
}
