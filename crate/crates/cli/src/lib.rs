//! Command-line driver for the coding pipeline.
//!
//! A TOML config names the corpus, the backends and every stage setting.
//! Each command reads the artifacts of the stages before it from the run
//! directory and writes its own; see [`commands`] for the stage list.

pub mod artifact;
pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::PathBuf;

use axcode::evaluation::Level;
use clap::{Parser, Subcommand, ValueEnum};

use crate::commands::{Ctx, MethodFilter};
use crate::config::PipelineConfig;
pub use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LevelArg {
    Domain,
    Subtopic,
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Domain => Level::Domain,
            LevelArg::Subtopic => Level::Subtopic,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "axcode", version, about = "Open and axial coding of utterance corpora")]
pub struct Cli {
    #[arg(long, global = true, default_value = "axcode.toml")]
    pub config: PathBuf,
    /// Recompute even when outputs are up to date.
    #[arg(long, global = true)]
    pub force: bool,
    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Restrict to one axial coding path.
    #[arg(long, global = true, value_enum)]
    pub method: Option<MethodFilter>,
    /// Restrict extrinsic scores (and the scatter file) to one gold level.
    #[arg(long, global = true, value_enum)]
    pub level: Option<LevelArg>,
    /// Override the run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
pub enum Command {
    /// Validate the corpus and copy it into the run directory.
    Ingest,
    /// Code every utterance with the coder ensemble and moderator.
    Opencode,
    /// Score the clustering grid.
    Sweep,
    /// Cluster with the best (or fixed) configuration and name the clusters.
    AxialCluster,
    /// Group codes directly with the configured models.
    AxialLlm,
    /// Intrinsic and extrinsic metrics for every category system.
    Eval,
    /// Export concept graphs as DOT and JSON.
    Graph,
    /// Comparison tables and scatter data from the metrics.
    Report,
    /// Every stage in order.
    RunAll,
}

/// Load the config, apply flag overrides and run one command.
pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = PipelineConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    let ctx = Ctx::new(cfg, cli.force, cli.method, cli.level.map(Into::into));
    match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::Opencode => commands::opencode(&ctx),
        Command::Sweep => commands::sweep_cmd(&ctx),
        Command::AxialCluster => commands::axial_cluster(&ctx),
        Command::AxialLlm => commands::axial_llm(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Graph => commands::graph(&ctx),
        Command::Report => commands::report_cmd(&ctx),
        Command::RunAll => commands::run_all(&ctx),
    }
}

/// Parse `args`, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
