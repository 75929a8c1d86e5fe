use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use super::AdamConfig;
use crate::error::{Error, Result};
use crate::model::StepPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub steps: usize,
    pub lr: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            steps: 40_000,
            lr: 0.02,
            decay_every: 8_000,
            decay_factor: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub steps: usize,
    /// Rate of the flow-map parameters.
    pub lr: f64,
    /// Rate of the velocity network while it is fine-tuned.
    pub finetune_lr: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    /// Span range in temporal voxels.
    pub tau_min: f64,
    pub tau_max: f64,
    pub policy: StepPolicy,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Stage2Config {
            steps: 40_000,
            lr: 0.01,
            finetune_lr: 0.0008,
            decay_every: 8_000,
            decay_factor: 0.5,
            tau_min: 0.5,
            tau_max: 48.0,
            policy: StepPolicy::Sqrt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub adam: AdamConfig,
    /// Record every this many steps in the loss traces.
    pub trace_every: usize,
    /// Window of the moving average used for smoothed losses.
    pub smooth_window: usize,
    /// Abort when the loss exceeds `divergence_factor` times its initial
    /// value for `divergence_patience` consecutive steps.
    pub divergence_factor: f64,
    pub divergence_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            batch_size: 4096,
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            adam: AdamConfig::default(),
            trace_every: 10,
            smooth_window: 200,
            divergence_factor: 1e3,
            divergence_patience: 500,
        }
    }
}

impl TrainConfig {
    /// Desk-scale schedule: a tenth of the steps with the decay cadence
    /// scaled to match, spans up to 24 voxels and a frozen velocity network
    /// in stage 2.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 1024,
            stage1: Stage1Config {
                steps: 4_000,
                decay_every: 800,
                ..Stage1Config::default()
            },
            stage2: Stage2Config {
                steps: 4_000,
                decay_every: 800,
                tau_max: 24.0,
                finetune_lr: 0.0,
                ..Stage2Config::default()
            },
            ..TrainConfig::default()
        }
    }

    /// Full validation for user-supplied configurations. A zero
    /// `finetune_lr` freezes the velocity network during stage 2.
    pub fn validate(&self) -> Result<()> {
        let (s1, s2) = (&self.stage1, &self.stage2);
        if !(s1.lr > 0.0 && s2.lr > 0.0) {
            return Err(Error::Config("stage learning rates must be positive".into()));
        }
        if s2.finetune_lr >= s2.lr {
            return Err(Error::Config("stage2.finetune_lr must be below stage2.lr".into()));
        }
        self.check_runnable()
    }

    /// The checks the training loops rely on. Zero learning rates are
    /// accepted here so a stage can be run as a no-op.
    pub fn check_runnable(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        let (s1, s2) = (&self.stage1, &self.stage2);
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if [s1.lr, s2.lr, s2.finetune_lr].iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return bad("learning rates must be finite and non-negative");
        }
        if !(s2.tau_min > 0.0 && s2.tau_min < s2.tau_max) {
            return bad("need 0 < stage2.tau_min < stage2.tau_max");
        }
        for f in [s1.decay_factor, s2.decay_factor] {
            if !(f > 0.0 && f < 1.0) {
                return bad("decay_factor must lie in (0, 1)");
            }
        }
        if s1.decay_every == 0 || s2.decay_every == 0 {
            return bad("decay_every must be positive");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps be positive");
        }
        if self.trace_every == 0 || self.smooth_window == 0 {
            return bad("trace_every and smooth_window must be positive");
        }
        Ok(())
    }
}

/// `lr · factor^⌊step / every⌋`.
pub fn scheduled_lr(lr: f64, factor: f64, every: usize, step: usize) -> f64 {
    lr * factor.powi((step / every) as i32)
}
