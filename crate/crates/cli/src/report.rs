//! Verdict reports: JSON lines or plot-ready CSV, written atomically.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use bridgelab::stein::Verdict;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::CliError;

/// A plot-ready table attached to a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// One verdict. Wall-clock time is deliberately absent so that reruns are
/// byte-identical; runners print it on stderr instead.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct VerdictReport {
    pub experiment: String,
    pub reference: String,
    pub verdict: Verdict,
    pub measured: Map<String, Value>,
    pub bounds: Map<String, Value>,
    pub details: Value,
    pub seed: u64,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
    #[serde(skip)]
    pub table: Option<Table>,
}

impl VerdictReport {
    pub fn new(experiment: impl Into<String>, reference: impl Into<String>, config: &ExperimentConfig) -> Self {
        Self {
            experiment: experiment.into(),
            reference: reference.into(),
            verdict: Verdict::Pass,
            measured: Map::new(),
            bounds: Map::new(),
            details: Value::Null,
            seed: config.seed(),
            config_hash: config.hash(),
            config: config.hashed(),
            table: None,
        }
    }

    pub fn measure(mut self, key: &str, value: impl Serialize) -> Self {
        self.measured.insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }

    pub fn bound(mut self, key: &str, value: impl Serialize) -> Self {
        self.bounds.insert(key.into(), serde_json::to_value(value).unwrap_or(Value::Null));
        self
    }

    pub fn details(mut self, value: impl Serialize) -> Self {
        self.details = serde_json::to_value(value).unwrap_or(Value::Null);
        self
    }

    pub fn table(mut self, table: Table) -> Self {
        self.table = Some(table);
        self
    }

    /// Pass when `ok`, fail otherwise; an earlier failure sticks.
    pub fn require(mut self, ok: bool) -> Self {
        if !ok {
            self.verdict = Verdict::Fail;
        }
        self
    }

    pub fn with_verdict(mut self, v: Verdict) -> Self {
        self.verdict = v;
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

pub fn verdict_word(v: Verdict) -> &'static str {
    match v {
        Verdict::Pass => "pass",
        Verdict::Fail => "fail",
        Verdict::Inconclusive => "inconclusive",
    }
}

/// JSON lines, or CSV blocks each headed by a `#` line naming the report.
pub fn render(reports: &[VerdictReport], format: &str) -> Result<String, CliError> {
    let mut out = String::new();
    for r in reports {
        if format == "csv" {
            out.push_str(&format!("# experiment={} verdict={} seed={} config_hash={}\n", r.experiment, verdict_word(r.verdict), r.seed, r.config_hash));
            match &r.table {
                Some(t) => out.push_str(&t.to_csv()),
                None => {
                    let (keys, vals): (Vec<_>, Vec<_>) = r.measured.iter().chain(&r.bounds).map(|(k, v)| (k.clone(), v.to_string())).unzip();
                    out.push_str(&format!("{}\n{}\n", keys.join(","), vals.join(",")));
                }
            }
        } else {
            out.push_str(&serde_json::to_string(r).map_err(|e| CliError::Io(std::io::Error::other(e)))?);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::Io(e.error))?;
    Ok(())
}
