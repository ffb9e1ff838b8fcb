//! The `wsphen` command line: one subcommand per pipeline stage, sharing a
//! TOML run configuration and a run directory.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use wsphen_core::{Error, ErrorKind};

pub use config::RunConfig;

/// A core error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub source: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage `{}` failed", self.stage)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError>;
}

impl<T> StageExt<T> for wsphen_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, StageError> {
        self.map_err(|source| StageError { stage, source })
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(clap::Error),
    Stage(StageError),
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        CliError::Stage(e)
    }
}

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(e) => e.exit_code(),
            CliError::Stage(e) => match e.source.kind() {
                ErrorKind::Config => EXIT_CONFIG,
                ErrorKind::Data => EXIT_DATA,
                ErrorKind::Numeric => EXIT_NUMERIC,
            },
        }
    }

    /// Prints the error and its cause chain to stderr (help text to stdout).
    pub fn report(&self) {
        match self {
            CliError::Usage(e) => {
                let _ = e.print();
            }
            CliError::Stage(e) => {
                eprintln!("error: {e}");
                let mut cause = std::error::Error::source(e);
                while let Some(c) = cause {
                    eprintln!("  caused by: {c}");
                    cause = c.source();
                }
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "wsphen",
    version,
    about = "Weakly supervised transformer phenotyping pipeline",
    after_help = "Any config key can be overridden with --section.key VALUE, or --key VALUE when the key name is unique."
)]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; stage seeds are derived from it.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Run directory for every output.
    #[arg(long, global = true)]
    out: Option<String>,
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort, embedding table and ground-truth sidecar.
    Synth,
    /// Assign initial silver labels from anchor counts.
    InitSilver,
    /// Calibrate silver labels against gold-train and fix the cohort split.
    Calibrate,
    /// Train with silver-label refinement.
    Train,
    /// Score a checkpoint on gold folds against the count baseline.
    Eval,
    /// Export probabilities and pooled embeddings for every patient.
    Embed,
    /// PCA and k-means over exported embeddings.
    Cluster,
    /// Kaplan-Meier, log-rank and Cox between clusters.
    Survival,
}

const CLAP_FLAGS_WITH_VALUE: &[&str] = &["config", "seed", "out"];
const CLAP_FLAGS: &[&str] = &["help", "version", "verbose"];

type SplitArgs = (Vec<OsString>, Vec<(String, String)>);

/// Splits argv into clap arguments and config overrides.
fn split_args(args: &[OsString]) -> Result<SplitArgs, CliError> {
    let mut clap_args = Vec::new();
    let mut overrides = Vec::new();
    let mut it = args.iter().peekable();
    if let Some(bin) = it.next() {
        clap_args.push(bin.clone());
    }
    while let Some(arg) = it.next() {
        let Some(text) = arg.to_str() else {
            clap_args.push(arg.clone());
            continue;
        };
        if text == "-c" {
            clap_args.push(arg.clone());
            if let Some(v) = it.next() {
                clap_args.push(v.clone());
            }
            continue;
        }
        let Some(flag) = text.strip_prefix("--").filter(|f| !f.is_empty()) else {
            clap_args.push(arg.clone());
            continue;
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        if CLAP_FLAGS.contains(&name) {
            clap_args.push(arg.clone());
            continue;
        }
        if CLAP_FLAGS_WITH_VALUE.contains(&name) {
            clap_args.push(arg.clone());
            if inline.is_none() {
                if let Some(v) = it.next() {
                    clap_args.push(v.clone());
                }
            }
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => match it.next().and_then(|v| v.to_str()) {
                Some(v) => v.to_string(),
                None => {
                    return Err(CliError::Stage(StageError {
                        stage: "config",
                        source: Error::Config(format!("--{name} needs a value")),
                    }))
                }
            },
        };
        overrides.push((name.replace('-', "_"), value));
    }
    Ok((clap_args, overrides))
}

/// Parses `args` (program name first), resolves the configuration and runs
/// one subcommand.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let (clap_args, mut overrides) = split_args(&args)?;
    let cli = Cli::try_parse_from(clap_args).map_err(CliError::Usage)?;
    init_logging(cli.verbose);
    if let Some(seed) = cli.seed {
        overrides.push(("run.seed".into(), seed));
    }
    if let Some(out) = cli.out {
        overrides.push(("run.out_dir".into(), format!("{out:?}")));
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides).stage("config")?;
    commands::execute(cli.command, cfg)?;
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}
