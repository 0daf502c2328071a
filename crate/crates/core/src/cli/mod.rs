//! The `fkgen` command-line front end.
//!
//! Exit codes: 0 success, 1 other runtime error, 2 configuration error,
//! 3 model contract violation, 4 failed check, 5 enumeration cap exceeded.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::error::Error;

pub use config::ScenarioConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MODEL_CONTRACT: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;
pub const EXIT_CAP_EXCEEDED: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model contract violated: {0}")]
    ModelContract(String),
    #[error("checks failed: {0}")]
    ChecksFailed(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::ModelContract(_) => EXIT_MODEL_CONTRACT,
            CliError::ChecksFailed(_) => EXIT_CHECK_FAILED,
            CliError::Core(e) if e.is_model_contract() => EXIT_MODEL_CONTRACT,
            CliError::Core(Error::EnumerationCap { .. }) => EXIT_CAP_EXCEEDED,
            CliError::Core(
                Error::FixtureParse { .. }
                | Error::InvalidArgument(_)
                | Error::FunctionalTooShort { .. }
                | Error::UnsupportedFunctional { .. }
                | Error::EpochOutOfRange { .. }
                | Error::DimensionMismatch(_)
                | Error::TooFewReplicates { .. }
                | Error::EpsilonConstraint { .. },
            ) => EXIT_CONFIG,
            CliError::Core(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "fkgen",
    version,
    about = "Particle smoothing experiments on Feynman-Kac models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Scenario configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `run.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Forward-only smoothed estimates per epoch and the final smoother state.
    Smooth,
    /// Ancestral-line estimates and lineage statistics.
    Genealogy,
    /// N * Var of the estimators over a grid of horizons and particle counts.
    CompareVariance,
    /// Exact identities and an unbiasedness test on a finite-state model.
    OracleCheck,
    /// Normalized smoothed estimates against the h-process limit.
    Hprocess,
}

/// Files written by one command.
#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub out_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

/// Run one command from a parsed config.
pub fn execute(
    command: Command,
    config: ScenarioConfig,
    base_dir: Option<&Path>,
    threads: Option<usize>,
) -> Result<Report, CliError> {
    let out = Output::create(&config)?;
    let run = || commands::dispatch(command, &config, base_dir, &out);
    match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| CliError::Config(format!("cannot build a pool of {k} threads: {e}")))?
            .install(run)?,
        None => run()?,
    }
    Ok(Report {
        out_dir: out.dir.clone(),
        files: out.written.into_inner().expect("output list lock"),
    })
}

/// Parse arguments and run; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = (|| {
        let path = cli
            .config
            .as_deref()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        let config = ScenarioConfig::load(path)?.with_overrides(cli.seed, cli.out.as_deref());
        execute(cli.command, config, path.parent(), cli.threads)
    })();
    match result {
        Ok(report) => {
            for f in &report.files {
                println!("wrote {}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("fkgen: {e}");
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run_from(std::env::args_os())
}

/// Output directory plus the `# seed=.. scenario_hash=..` header shared by every file.
pub(crate) struct Output {
    dir: PathBuf,
    seed: u64,
    hash: String,
    written: std::sync::Mutex<Vec<PathBuf>>,
}

pub(crate) const DEFAULT_OUT_DIR: &str = "fkgen-out";

impl Output {
    fn create(config: &ScenarioConfig) -> Result<Self, CliError> {
        let dir = PathBuf::from(config.run.out.as_deref().unwrap_or(DEFAULT_OUT_DIR));
        fs::create_dir_all(&dir).map_err(Error::from)?;
        let out = Self {
            dir,
            seed: config.run.seed,
            hash: config.scenario_hash()?,
            written: Default::default(),
        };
        out.write_text(
            "resolved_config.toml",
            &format!("{}\n{}", out.comment(), config.to_toml()?),
        )?;
        Ok(out)
    }

    pub(crate) fn seed(&self) -> u64 {
        self.seed
    }

    pub(crate) fn hash(&self) -> &str {
        &self.hash
    }

    fn comment(&self) -> String {
        format!("# seed={} scenario_hash={}", self.seed, self.hash)
    }

    pub(crate) fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, text).map_err(Error::from)?;
        self.written.lock().expect("output list lock").push(path);
        Ok(())
    }

    /// RFC-4180 CSV preceded by the header comment.
    pub(crate) fn write_csv(
        &self,
        name: &str,
        header: &[&str],
        rows: &[Vec<String>],
    ) -> Result<(), CliError> {
        let mut buf = format!("{}\n", self.comment()).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header).map_err(Error::from)?;
            for row in rows {
                w.write_record(row).map_err(Error::from)?;
            }
            w.flush().map_err(Error::from)?;
        }
        self.write_text(name, &String::from_utf8(buf).expect("csv output is UTF-8"))
    }
}

/// Shortest round-tripping decimal; `NaN` and infinities keep their Rust spelling.
pub(crate) fn num(v: f64) -> String {
    format!("{v:?}")
}
