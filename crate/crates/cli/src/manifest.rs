use std::path::{Path, PathBuf};

use anyhow::Result;
use crffuse_core::config::Config;

use crate::io::write_atomic;

/// Provenance record written next to every output: what ran, on what, with
/// which resolved configuration, and how long each stage took.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub command: String,
    pub config: Config,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    /// (stage, seconds)
    pub timings: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(command: &str, config: &Config) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            seed: config.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings: Vec::new(),
        }
    }

    pub fn time(&mut self, stage: &str, seconds: f64) {
        self.timings.push((stage.into(), seconds));
    }

    /// `key = value` lines, then the resolved config after a `[config]` marker.
    pub fn render(&self) -> String {
        let mut out = format!("command = {}\nseed = {}\n", self.command, self.seed);
        for p in &self.inputs {
            out.push_str(&format!("input = {}\n", p.display()));
        }
        for p in &self.outputs {
            out.push_str(&format!("output = {}\n", p.display()));
        }
        for (stage, secs) in &self.timings {
            out.push_str(&format!("seconds.{stage} = {secs:.6}\n"));
        }
        out.push_str("\n[config]\n");
        out.push_str(&self.config.render());
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}
