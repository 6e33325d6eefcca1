//! Experiment configuration: built-in defaults, then a `key=value` file,
//! then command-line flags. Every key an experiment accepts is declared in
//! its catalog entry; anything else is a usage error.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::catalog::Experiment;
use crate::CliError;

/// Keys every experiment accepts.
pub const COMMON_KEYS: &[(&str, &str, &str)] = &[
    ("seed", "7", "global 64-bit seed"),
    ("workers", "1", "worker threads (never changes results)"),
    ("out", "-", "output path, '-' for stdout"),
    ("format", "json", "report format: json (JSON lines) or csv"),
];

/// Keys left out of the config hash: they cannot change any number.
const UNHASHED: &[&str] = &["workers", "out", "format"];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: &'static str,
    pub values: BTreeMap<String, String>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(usage(format!("config line {}: expected key=value, got '{line}'", i + 1)));
        };
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Defaults of `exp` overridden by `file` entries and then by `flags`.
    pub fn resolve(exp: &Experiment, file: Option<&Path>, flags: &[(String, String)]) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> = COMMON_KEYS.iter().chain(exp.keys).map(|(k, d, _)| (k.to_string(), d.to_string())).collect();
        let mut set = |k: &str, v: &str, origin: &str| -> Result<(), CliError> {
            match values.get_mut(k) {
                Some(slot) => {
                    *slot = v.to_string();
                    Ok(())
                }
                None => Err(usage(format!("unknown key '{k}' in {origin} for '{}'", exp.name))),
            }
        };
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            for (k, v) in parse_config_text(&text)? {
                set(&k, &v, "config file")?;
            }
        }
        for (k, v) in flags {
            set(k, v, "flags")?;
        }
        let cfg = Self { experiment: exp.name, values };
        cfg.validate_common()?;
        Ok(cfg)
    }

    fn validate_common(&self) -> Result<(), CliError> {
        self.u64("seed")?;
        if self.usize("workers")? == 0 {
            return Err(usage("workers must be at least 1"));
        }
        match self.str("format") {
            "json" | "csv" => Ok(()),
            other => Err(usage(format!("format must be json or csv, got '{other}'"))),
        }
    }

    pub fn str(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_else(|| panic!("key '{key}' is not declared"))
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.str(key);
        raw.parse().map_err(|_| usage(format!("key '{key}': cannot parse '{raw}'")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        let v: f64 = self.parse(key)?;
        if !v.is_finite() {
            return Err(usage(format!("key '{key}' must be finite")));
        }
        Ok(v)
    }

    pub fn positive(&self, key: &str) -> Result<f64, CliError> {
        let v = self.f64(key)?;
        if v <= 0.0 {
            return Err(usage(format!("key '{key}' must be positive, got {v}")));
        }
        Ok(v)
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        self.parse(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.parse(key)
    }

    /// A count written as an integer or in scientific notation (`1e5`).
    pub fn count(&self, key: &str) -> Result<u64, CliError> {
        if let Ok(v) = self.parse::<u64>(key) {
            return Ok(v);
        }
        let v = self.f64(key)?;
        if v < 0.0 || v.fract() != 0.0 || v > 1e15 {
            return Err(usage(format!("key '{key}' must be a whole count, got {v}")));
        }
        Ok(v as u64)
    }

    /// Comma-separated finite numbers.
    pub fn list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        let raw = self.str(key);
        if raw.trim().is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| usage(format!("key '{key}': '{s}' is not a finite number")))
            })
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.u64("seed").expect("validated")
    }

    pub fn workers(&self) -> usize {
        self.usize("workers").expect("validated")
    }

    /// SHA-256 over the experiment name and every key that can change a result.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.experiment.as_bytes());
        h.update(b"\n");
        for (k, v) in &self.values {
            if UNHASHED.contains(&k.as_str()) {
                continue;
            }
            h.update(format!("{k}={v}\n").as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The keys that enter the hash; written as a config file they rerun
    /// the experiment exactly.
    pub fn hashed(&self) -> BTreeMap<String, String> {
        self.values.iter().filter(|(k, _)| !UNHASHED.contains(&k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect()
    }
}
