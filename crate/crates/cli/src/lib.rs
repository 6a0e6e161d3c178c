//! `adw`: dataset preparation, feature extraction, training, scoring,
//! repeated-split risk estimation and report plots.
//!
//! Exit codes: 0 on success, 1 for invalid inputs or configuration, 2 for
//! runtime or numerical failures.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod record;
pub mod svg;

pub use config::{DetectorKind, RunConfig};
pub use record::ExperimentRecord;

/// Marks an error as caused by bad input (exit code 1).
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Debug, Parser)]
#[command(name = "adw", version, about = "Anomaly-detection workbench")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// TOML run configuration; flags take precedence over it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for extraction, training and folds.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Recompute outputs that already exist.
    #[arg(long, global = true)]
    pub force: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mask, center-embed and/or rotate a dataset into a new directory.
    Prep(commands::PrepArgs),
    /// Extract multi-scale feature files for every manifest record.
    Features(commands::FeaturesArgs),
    /// Train a detector on the nominal records of a feature directory.
    Train(commands::TrainArgs),
    /// Score samples into a CSV of sample_id,label,score.
    Score(commands::ScoreArgs),
    /// Repeated three-way-split risk estimation.
    Protocol(commands::ProtocolArgs),
    /// SVG plots and a markdown summary of a protocol report.
    Report(commands::ReportArgs),
}

/// Defaults, then the config file, then flags.
pub fn effective_config(global: &GlobalArgs) -> anyhow::Result<RunConfig> {
    let mut cfg = match &global.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = global.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: Cli) -> anyhow::Result<()> {
    let cfg = effective_config(&cli.global)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(Invalid("--jobs must be at least 1".into()).into());
        }
        pool = pool.num_threads(j);
    }
    let pool = pool.build()?;
    let g = &cli.global;
    pool.install(|| match &cli.command {
        Command::Prep(a) => commands::cmd_prep(a, cfg, g).map(drop),
        Command::Features(a) => commands::cmd_features(a, cfg, g).map(drop),
        Command::Train(a) => commands::cmd_train(a, cfg, g).map(drop),
        Command::Score(a) => commands::cmd_score(a, cfg, g).map(drop),
        Command::Protocol(a) => commands::cmd_protocol(a, cfg, g).map(drop),
        Command::Report(a) => commands::cmd_report(a, cfg, g).map(drop),
    })
}

pub fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(c) = cause.downcast_ref::<adw_core::Error>() {
            return if c.is_validation() { 1 } else { 2 };
        }
        if cause.is::<Invalid>() || cause.is::<toml::de::Error>() || cause.is::<serde_json::Error>()
        {
            return 1;
        }
    }
    2
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
