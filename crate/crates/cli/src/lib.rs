//! Command-line runner for the bridge experiments.
//!
//! Exit codes: 0 every verdict passed, 1 some verdict failed or was
//! inconclusive, 2 usage error, 3 numerical or solver error.

pub mod battery;
pub mod catalog;
pub mod config;
pub mod experiments;
pub mod report;

use std::io::Write;
use std::path::PathBuf;

use bridgelab::mc::Engine;
use clap::error::ErrorKind;
use clap::{Arg, ArgAction, Command};

use catalog::{Experiment, EXPERIMENTS};
use config::{ExperimentConfig, COMMON_KEYS};
use report::{render, verdict_word, write_atomic, VerdictReport};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] bridgelab::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(bridgelab::Error::Argument(_)) => EXIT_USAGE,
            CliError::Core(_) | CliError::Io(_) => EXIT_NUMERIC,
        }
    }
}

fn subcommand(exp: &Experiment) -> Command {
    let mut cmd = Command::new(exp.name).about(exp.summary).after_help(format!("Checks: {}", exp.anchor)).arg(
        Arg::new("config").long("config").value_name("FILE").value_parser(clap::value_parser!(PathBuf)).help("key=value file; flags override it"),
    );
    for (key, default, help) in COMMON_KEYS.iter().chain(exp.keys) {
        cmd = cmd.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .action(ArgAction::Set)
                .allow_hyphen_values(true)
                .help(format!("{help} [default: {default}]")),
        );
    }
    cmd
}

pub fn command() -> Command {
    let mut root = Command::new("bridgelab")
        .about("Numerical checks for Langevin bridges")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(Command::new("list").about("List every experiment with the result it checks"));
    for exp in EXPERIMENTS {
        root = root.subcommand(subcommand(exp));
    }
    root
}

fn execute(exp: &Experiment, matches: &clap::ArgMatches, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, CliError> {
    let flags: Vec<(String, String)> = COMMON_KEYS
        .iter()
        .chain(exp.keys)
        .filter_map(|(k, _, _)| matches.get_one::<String>(k).map(|v| (k.to_string(), v.clone())))
        .collect();
    let cfg = ExperimentConfig::resolve(exp, matches.get_one::<PathBuf>("config").map(PathBuf::as_path), &flags)?;
    let engine = Engine::new(cfg.workers())?;
    let reports: Vec<VerdictReport> = if exp.name == "verify-all" {
        battery::run_battery(&cfg, &engine, stderr)?
    } else {
        experiments::run_experiment(exp, &cfg, &engine)?
    };
    let text = render(&reports, cfg.str("format"))?;
    match cfg.str("out") {
        "-" => stdout.write_all(text.as_bytes())?,
        path => {
            write_atomic(std::path::Path::new(path), &text)?;
            for r in &reports {
                writeln!(stdout, "{} {}", r.experiment, verdict_word(r.verdict))?;
            }
        }
    }
    Ok(if reports.iter().all(VerdictReport::passed) { EXIT_PASS } else { EXIT_FAIL })
}

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn main_with(args: Vec<String>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_PASS,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_PASS { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    if name == "list" {
        let _ = stdout.write_all(catalog::render_catalog().as_bytes());
        return EXIT_PASS;
    }
    let exp = catalog::find(name).expect("every subcommand is registered");
    match execute(exp, sub, stdout, stderr) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let argv = std::iter::once("bridgelab").chain(args.iter().copied()).map(String::from).collect();
        let code = main_with(argv, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn command_is_well_formed() {
        command().debug_assert();
    }

    #[test]
    fn coupling_envelope_value() {
        let (code, out, _) = run(&["coupling", "--alpha", "1", "--T", "1", "--dx", "1", "--dy", "0", "--t", "0"]);
        assert_eq!(code, EXIT_PASS);
        let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
        assert!((v["bounds"]["envelope"].as_f64().unwrap() - 0.32402).abs() < 1e-5);
    }

    #[test]
    fn usage_and_numeric_exit_codes() {
        assert_eq!(run(&["coupling", "--alpah", "1"]).0, EXIT_USAGE);
        assert_eq!(run(&["coupling", "--alpha", "x"]).0, EXIT_USAGE);
        assert_eq!(run(&["coupling", "--alpha", "-1"]).0, EXIT_USAGE);
        assert_eq!(run(&["nonsense"]).0, EXIT_USAGE);
        assert_eq!(run(&["verify-all", "--only", "13"]).0, EXIT_USAGE);
        // a concave reciprocal potential refuses the concentration check
        let (code, _, err) = run(&["concentration", "--potential", "sine:0.5", "--budget", "10"]);
        assert_eq!(code, EXIT_NUMERIC, "{err}");
        assert!(err.contains("precondition"));
    }

    #[test]
    fn help_cites_the_checked_result() {
        for exp in EXPERIMENTS {
            let (code, out, _) = run(&[exp.name, "--help"]);
            assert_eq!(code, EXIT_PASS);
            assert!(out.contains(exp.anchor), "{}", exp.name);
        }
    }
}
