//! `spectator` command-line front end.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use config::Config;
pub use output::{Header, OutputSet};

use crate::error::Error;

/// Default output directory when `--out` is absent.
pub const OUT_DIR_ENV: &str = "SPECTATOR_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Posterior narrowing over sequential spectator readouts.
    BayesNarrowing,
    /// Closed-form single-spectator fidelity and rephasing times.
    AnalyticSweep,
    /// Density-matrix trajectory ensembles over n_rea, protocol and K.
    Simulate,
    /// Gate-wait sweep with first-maximum extraction.
    GateSweep,
    /// Expected fidelity versus success probability.
    Strategy,
    /// Least-squares fit of fidelity data.
    Fit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::BayesNarrowing => "bayes-narrowing",
            Command::AnalyticSweep => "analytic-sweep",
            Command::Simulate => "simulate",
            Command::GateSweep => "gate-sweep",
            Command::Strategy => "strategy",
            Command::Fit => "fit",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "spectator", version, about = "Spectator-qubit dephasing mitigation toolkit")]
pub struct Args {
    #[command(subcommand)]
    pub command: Command,
    /// Configuration file; built-in defaults when omitted.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (default: $SPECTATOR_OUT_DIR, else `out`).
    #[arg(short, long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// `section.key=value` override; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

/// Everything a run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub command: Command,
    pub config_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub overrides: Vec<String>,
}

impl ExperimentManifest {
    pub fn from_args(args: &Args) -> Self {
        let output_dir = args
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        Self {
            command: args.command,
            config_path: args.config.clone(),
            output_dir,
            seed: args.seed,
            overrides: args.overrides.clone(),
        }
    }

    pub fn load_config(&self) -> Result<Config, Error> {
        let mut cfg = match &self.config_path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Config { line: 0, msg: format!("cannot read {}: {e}", p.display()) })?;
                Config::parse(&text)?
            }
            None => Config::default(),
        };
        for o in &self.overrides {
            cfg.set(o)?;
        }
        Ok(cfg)
    }

    fn config_dir(&self) -> PathBuf {
        self.config_path.as_ref().and_then(|p| p.parent().map(Path::to_path_buf)).unwrap_or_else(|| PathBuf::from("."))
    }

    /// Header command line, independent of the output directory.
    pub fn command_line(&self) -> String {
        let mut s = format!("spectator {} --seed {}", self.command.name(), self.seed);
        if let Some(p) = &self.config_path {
            s.push_str(&format!(" --config {}", p.display()));
        }
        for o in &self.overrides {
            s.push_str(&format!(" --set {o}"));
        }
        s
    }
}

/// Runs the manifest's command and returns staged files plus the header.
pub fn execute(manifest: &ExperimentManifest) -> Result<(OutputSet, Header), Error> {
    let cfg = manifest.load_config()?;
    let seed = manifest.seed;
    let files = match manifest.command {
        Command::BayesNarrowing => commands::bayes_narrowing(&cfg)?,
        Command::AnalyticSweep => commands::analytic_sweep(&cfg)?,
        Command::Simulate => commands::simulate(&cfg, seed)?,
        Command::GateSweep => commands::gate_sweep(&cfg, seed)?,
        Command::Strategy => commands::strategy(&cfg)?,
        Command::Fit => commands::fit(&cfg, &manifest.config_dir())?,
    };
    let header = Header { seed, config_hash: cfg.hash(), command_line: manifest.command_line() };
    Ok((files, header))
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::InvalidParameter(_) => EXIT_CONFIG,
        Error::ImpossibleOutcome { .. } | Error::CorruptedState(_) | Error::Coverage(_) | Error::FitFailure(_) => {
            EXIT_NUMERIC
        }
        Error::ResourceLimit(_) => EXIT_RESOURCE,
        Error::Io(_) => EXIT_IO,
    }
}

/// Full run: parse, execute, commit. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let manifest = ExperimentManifest::from_args(&args);
    let result = execute(&manifest).and_then(|(files, header)| files.commit(&manifest.output_dir, &header));
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
