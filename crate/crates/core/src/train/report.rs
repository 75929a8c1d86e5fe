use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::Result;
use crate::fsutil::atomic_write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub step: usize,
    pub loss: f64,
}

/// Mean loss of the rows whose span fell in quartile `bucket` (0..4) of the
/// training span range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BucketPoint {
    pub step: usize,
    pub bucket: usize,
    pub loss: f64,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    pub steps: usize,
    pub wall_ms: u64,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Moving-average loss over the first and last windows.
    pub smoothed_initial: f64,
    pub smoothed_final: f64,
    pub trace: Vec<TracePoint>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tau_buckets: Vec<BucketPoint>,
}

impl StageReport {
    pub(super) fn new(stage: &str, steps: usize) -> Self {
        StageReport {
            stage: stage.into(),
            steps,
            wall_ms: 0,
            initial_loss: f64::NAN,
            final_loss: f64::NAN,
            smoothed_initial: f64::NAN,
            smoothed_final: f64::NAN,
            trace: Vec::new(),
            tau_buckets: Vec::new(),
        }
    }

    pub(super) fn record_buckets(&mut self, step: usize, norms: &[f64], spans: &[f64], voxel: f64, lo: f64, hi: f64) {
        let mut sum = [0.0; 4];
        let mut count = [0usize; 4];
        for (&l, &s) in norms.iter().zip(spans) {
            let q = ((s.abs() / voxel - lo) / (hi - lo) * 4.0).floor().clamp(0.0, 3.0) as usize;
            sum[q] += l;
            count[q] += 1;
        }
        for bucket in 0..4 {
            if count[bucket] > 0 {
                self.tau_buckets.push(BucketPoint {
                    step,
                    bucket,
                    loss: sum[bucket] / count[bucket] as f64,
                    rows: count[bucket],
                });
            }
        }
    }

    pub(super) fn finish(&mut self, losses: &[f64], window: usize, wall: Duration) {
        self.wall_ms = wall.as_millis() as u64;
        if losses.is_empty() {
            return;
        }
        let w = window.min(losses.len());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        self.initial_loss = losses[0];
        self.final_loss = *losses.last().unwrap();
        self.smoothed_initial = mean(&losses[..w]);
        self.smoothed_final = mean(&losses[losses.len() - w..]);
    }

    /// `step,loss,tau_bucket`; bucket `all` is the whole batch.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("step,loss,tau_bucket\n");
        let mut buckets = self.tau_buckets.iter().peekable();
        for p in &self.trace {
            let _ = writeln!(out, "{},{:e},all", p.step, p.loss);
            while let Some(b) = buckets.next_if(|b| b.step == p.step) {
                let _ = writeln!(out, "{},{:e},q{}", b.step, b.loss, b.bucket + 1);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub stages: Vec<StageReport>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn new(config: TrainConfig) -> Self {
        TrainReport {
            config,
            stages: Vec::new(),
            checkpoint: None,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        atomic_write(path, |w| Ok(serde_json::to_writer_pretty(w, self)?))
    }

    /// Writes `<dir>/loss_<stage>.csv` per stage and returns the paths.
    pub fn save_traces(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        self.stages
            .iter()
            .map(|s| {
                let path = dir.join(format!("loss_{}.csv", s.stage));
                let body = s.trace_csv();
                atomic_write(&path, |w| {
                    w.write_all(body.as_bytes())
                        .map_err(|e| crate::error::Error::io(&path, e))
                })?;
                Ok(path)
            })
            .collect()
    }
}
