//! Layered `key = value` settings: built-in defaults, then `TLF_SEED`, then
//! `--config`, then individual flags.

use std::fmt;
use std::path::Path;

use anyhow::Result;
use clap::ArgMatches;
use tlf_core::kv::KeyValues;

/// A mistake in how the program was invoked; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub const SEED_ENV: &str = "TLF_SEED";

/// Read a config file. A run manifest is accepted too: its `config.`
/// section is the snapshot of the run.
pub fn read_config_file(path: &Path) -> Result<KeyValues> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let kv = KeyValues::parse(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(if kv.contains("command") {
        kv.section("config")
    } else {
        kv
    })
}

/// Overrides from the environment, the config file and the flags, in
/// increasing precedence. Every key must appear in `known`.
pub fn resolve(known: &KeyValues, m: &ArgMatches) -> Result<KeyValues> {
    let mut out = KeyValues::new();
    if known.contains("seed") {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            let seed: u64 = raw
                .trim()
                .parse()
                .map_err(|_| usage(format!("{SEED_ENV}={raw} is not an unsigned integer")))?;
            out.set("seed", seed);
        }
    }
    if let Some(path) = m.get_one::<String>("config") {
        let file = read_config_file(Path::new(path))?;
        let unknown = file.unknown_keys(known);
        if !unknown.is_empty() {
            return Err(usage(format!("{path}: unknown keys: {}", unknown.join(", "))));
        }
        out.merge(&file);
    }
    for key in known.keys() {
        if let Some(v) = m.get_one::<String>(key) {
            out.set(key, v);
        }
    }
    Ok(out)
}

/// Parse a resolved key set into a config, reporting failures as usage
/// errors.
pub fn apply<T>(what: &str, r: tlf_core::Result<T>) -> Result<T> {
    r.map_err(|e| usage(format!("{what}: {e}")))
}
