//! Run manifests: every artifact-producing command records the resolved
//! configuration, seed, version, and wall time next to its outputs, so a
//! run is reproducible from the manifest alone.

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_sha256: Option<String>,
    /// Resolved configuration after flag overrides.
    pub config: Option<serde_json::Value>,
    pub seed: Option<u64>,
    pub args: Vec<String>,
    pub threads: usize,
    pub wall_time_ms: u128,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

pub fn version_string() -> String {
    format!("eru {}", env!("CARGO_PKG_VERSION"))
}

impl ManifestBuilder {
    pub fn new(command: &str) -> Self {
        ManifestBuilder {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                version: version_string(),
                config_sha256: None,
                config: None,
                seed: None,
                args: std::env::args().skip(1).collect(),
                threads: rayon_threads(),
                wall_time_ms: 0,
                inputs: Vec::new(),
                outputs: Vec::new(),
            },
        }
    }

    pub fn config(mut self, cfg: &eru_core::RunConfig) -> Self {
        self.manifest.config_sha256 = Some(cfg.sha256_hex());
        self.manifest.config = Some(cfg.to_json_value());
        self.manifest.seed = Some(cfg.seed);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.manifest.seed = Some(seed);
        self
    }

    pub fn input(mut self, path: &Path) -> Self {
        self.manifest.inputs.push(path.display().to_string());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.manifest.outputs.push(path.display().to_string());
        self
    }

    /// Writes the manifest (with final wall time) to `path`.
    pub fn write(mut self, path: &Path) -> anyhow::Result<()> {
        self.manifest.wall_time_ms = self.started.elapsed().as_millis();
        let bytes = serde_json::to_vec_pretty(&self.manifest)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

fn rayon_threads() -> usize {
    std::env::var("ERU_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}
