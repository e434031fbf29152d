//! Line-oriented `key = value` text used for every configuration file.
//!
//! Blank lines and lines starting with `#` are ignored. Nested settings use
//! dot-separated keys (`loss.gamma = 2`). Lists are comma separated.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected `key = value`", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(config_err(format!("line {}: empty key", n + 1)));
            }
            kv.entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(kv)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn set_list<T: Display>(&mut self, key: &str, values: &[T]) {
        let s: Vec<String> = values.iter().map(|v| v.to_string()).collect();
        self.set(key, s.join(","));
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Overwrite `target` with the parsed value when `key` is present.
    pub fn read<T: FromStr>(&self, key: &str, target: &mut T) -> Result<()> {
        if let Some(raw) = self.get_str(key) {
            *target = raw
                .parse()
                .map_err(|_| config_err(format!("cannot parse `{key} = {raw}`")))?;
        }
        Ok(())
    }

    pub fn read_list<T: FromStr>(&self, key: &str, target: &mut Vec<T>) -> Result<()> {
        if let Some(raw) = self.get_str(key) {
            *target = raw
                .split(',')
                .map(|s| s.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| config_err(format!("cannot parse list `{key} = {raw}`")))?;
        }
        Ok(())
    }

    /// Entries under `prefix.` with the prefix stripped.
    pub fn section(&self, prefix: &str) -> KeyValues {
        let p = format!("{prefix}.");
        KeyValues {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    pub fn merge_prefixed(&mut self, prefix: &str, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(format!("{prefix}.{k}"), v.clone());
        }
    }

    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    /// Keys not in `known`.
    pub fn unknown_keys<'a>(&'a self, known: &'a KeyValues) -> Vec<&'a str> {
        self.keys().filter(|k| !known.contains(k)).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_roundtrip() {
        let kv = KeyValues::parse("# comment\nseed = 7\n\nloss.gamma=2.5\nchannels = 16, 32,64\n").unwrap();
        let mut seed = 0u64;
        kv.read("seed", &mut seed).unwrap();
        assert_eq!(seed, 7);
        let mut ch: Vec<usize> = vec![];
        kv.read_list("channels", &mut ch).unwrap();
        assert_eq!(ch, vec![16, 32, 64]);
        assert_eq!(kv.section("loss").get_str("gamma"), Some("2.5"));
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
    }

    #[test]
    fn malformed_lines_fail() {
        assert!(KeyValues::parse("just words").is_err());
        assert!(KeyValues::parse(" = 3").is_err());
        let kv = KeyValues::parse("seed = x").unwrap();
        let mut seed = 0u64;
        assert!(kv.read("seed", &mut seed).is_err());
    }
}
