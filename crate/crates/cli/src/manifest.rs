//! The record every run leaves in its output directory.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use tlf_core::kv::KeyValues;

pub const MANIFEST_FILE: &str = "manifest.txt";

pub struct RunManifest {
    pub command: String,
    pub config: KeyValues,
    pub seed: Option<u64>,
    pub inputs: Vec<(String, PathBuf)>,
    pub out: PathBuf,
    pub started: String,
}

pub fn now_stamp() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, out: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config: KeyValues::new(),
            seed: None,
            inputs: Vec::new(),
            out: out.to_path_buf(),
            started: now_stamp(),
        }
    }

    pub fn input(&mut self, name: &str, path: &Path) {
        self.inputs.push((name.to_string(), path.to_path_buf()));
    }

    /// Render with the end timestamp taken now. Timestamps are the only
    /// lines that differ between two identical runs.
    pub fn render(&self) -> String {
        let mut kv = KeyValues::new();
        kv.set("command", &self.command);
        kv.set("version", env!("CARGO_PKG_VERSION"));
        if let Some(s) = self.seed {
            kv.set("seed", s);
        }
        for (name, p) in &self.inputs {
            kv.set(&format!("input.{name}"), p.display());
        }
        kv.set("output", self.out.display());
        kv.merge_prefixed("config", &self.config);
        kv.set("started", &self.started);
        kv.set("finished", now_stamp());
        kv.to_text()
    }

    pub fn write(&self) -> Result<()> {
        let p = self.out.join(MANIFEST_FILE);
        std::fs::write(&p, self.render()).with_context(|| format!("writing {}", p.display()))
    }
}
