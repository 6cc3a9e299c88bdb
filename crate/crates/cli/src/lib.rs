//! Command-line driver: every pipeline stage as a subcommand sharing one
//! config file, seed and output directory.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::RunConfig;
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dpmil", version, about = "Bag-level subtype classification from noisy instance labels")]
pub struct Cli {
    /// Flat `section.key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides `run.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    Gen,
    /// Stratified train/validation split.
    Split,
    /// Peer training and candidate extraction.
    Coteach,
    /// Per-class outlier filtering of the candidates.
    Denoise,
    /// Two-stage fine-tuning of the chosen model.
    Finetune,
    /// One-vs-rest models and weighted fusion.
    Fuse,
    /// Metrics report from prediction files.
    Eval {
        /// Prediction files to evaluate instead of the ones in the output directory.
        #[arg(long)]
        predictions: Vec<PathBuf>,
    },
    /// All stages in order.
    Pipeline {
        /// Also write the comparison table of every ablation arm.
        #[arg(long)]
        ablate: bool,
    },
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        Ok(cfg)
    }
}

/// Size of the worker pool from `DPMIL_THREADS`, if set.
pub fn thread_cap() -> Result<Option<usize>, CliError> {
    match std::env::var("DPMIL_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("DPMIL_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let run = cli.run_config()?;
    let ctx = commands::Ctx {
        config: run.seeded(),
        out: run.out.clone(),
    };
    match &cli.command {
        Command::Gen => commands::gen(&ctx),
        Command::Split => commands::split_cmd(&ctx),
        Command::Coteach => commands::coteach(&ctx),
        Command::Denoise => commands::denoise(&ctx),
        Command::Finetune => commands::finetune(&ctx),
        Command::Fuse => commands::fuse(&ctx),
        Command::Eval { predictions } => commands::eval(&ctx, predictions),
        Command::Pipeline { ablate } => commands::pipeline(&ctx, *ablate),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = thread_cap().and_then(|cap| match cap {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot build thread pool: {e}")))?
            .install(|| execute(&cli)),
        None => execute(&cli),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dpmil: {e}");
            e.exit_code()
        }
    }
}
