//! Run manifests: every command writes one next to its outputs, recording
//! the inputs, seed and tolerances needed to reproduce the run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub seed: u64,
    pub ode_tol: f64,
    pub tolerances: BTreeMap<String, f64>,
    pub wall_clock_s: f64,
    pub version: String,
}

pub struct ManifestBuilder {
    started: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(command: &str, seed: u64, ode_tol: f64) -> Self {
        ManifestBuilder {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                seed,
                ode_tol,
                tolerances: BTreeMap::new(),
                wall_clock_s: 0.0,
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
        }
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.display().to_string());
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.display().to_string());
    }

    pub fn tolerance(&mut self, name: &str, value: f64) {
        self.manifest.tolerances.insert(name.to_string(), value);
    }

    pub fn write(mut self, out_dir: &Path) -> std::io::Result<PathBuf> {
        self.manifest.wall_clock_s = self.started.elapsed().as_secs_f64();
        let path = out_dir.join(format!("{}_manifest.json", self.manifest.command));
        std::fs::write(&path, serde_json::to_string_pretty(&self.manifest)?)?;
        Ok(path)
    }
}
