use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::fsutil::atomic_write;

#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub bytes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct HostInfo {
    pub os: &'static str,
    pub arch: &'static str,
    pub cpus: usize,
    pub threads: usize,
}

/// Record of one command invocation, written as `<command>.manifest.json`
/// next to its artifacts once the command has succeeded.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub artifacts: Vec<Artifact>,
    pub strict: bool,
    pub started_unix: u64,
    pub wall_ms: u64,
    pub host: HostInfo,
}

pub fn version_string() -> String {
    match option_env!("NIFM_GIT_DESCRIBE") {
        Some(d) if !d.is_empty() => format!("{} ({d})", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Per-command state: resolved configuration, output directory and the
/// artifacts written so far.
pub struct Run {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub strict: bool,
    command: &'static str,
    artifacts: Vec<PathBuf>,
    start: Instant,
    started_unix: u64,
}

impl Run {
    pub fn new(command: &'static str, cfg: RunConfig, strict: bool) -> Self {
        Run {
            out: cfg.output_dir.clone(),
            cfg,
            strict,
            command,
            artifacts: Vec::new(),
            start: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Atomically writes `out/name`.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        atomic_write(&path, |w| w.write_all(bytes).map_err(|e| Error::io(&path, e)))?;
        self.record(&path);
        Ok(path)
    }

    pub fn record(&mut self, path: &Path) {
        self.artifacts.push(path.to_path_buf());
    }

    pub fn finish(self) -> Result<PathBuf> {
        let artifacts = self
            .artifacts
            .iter()
            .map(|p| {
                let bytes = std::fs::metadata(p).map_err(|e| Error::io(p, e))?.len();
                Ok(Artifact {
                    path: p.clone(),
                    bytes,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let manifest = RunManifest {
            command: self.command.into(),
            version: version_string(),
            config: self.cfg.clone(),
            artifacts,
            strict: self.strict,
            started_unix: self.started_unix,
            wall_ms: self.start.elapsed().as_millis() as u64,
            host: HostInfo {
                os: std::env::consts::OS,
                arch: std::env::consts::ARCH,
                cpus: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
                threads: rayon::current_num_threads(),
            },
        };
        let path = self.path(&format!("{}.manifest.json", self.command));
        atomic_write(&path, |w| Ok(serde_json::to_writer_pretty(w, &manifest)?))?;
        Ok(path)
    }
}
