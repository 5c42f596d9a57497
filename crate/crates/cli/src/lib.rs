//! Staged command-line driver for analysis, task construction, rule
//! optimization and evaluation.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use misinfo_core::provider::ChatProvider;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use crate::config::RunConfig;
use crate::error::Failure;

#[derive(Debug, Parser)]
#[command(name = "misinfo", version, about = "Cross-domain misinformation detection")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Continue from existing archives and checkpoints.
    #[arg(long, global = true)]
    pub resume: bool,
    /// `live`, or `mock:<script or transcript file>`.
    #[arg(long, global = true)]
    pub provider: Option<String>,
    /// Save every provider exchange to this transcript file.
    #[arg(long, global = true)]
    pub record: Option<PathBuf>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true)]
    pub n_tasks: Option<usize>,
    #[arg(long, global = true)]
    pub n_iter: Option<usize>,
    #[arg(long, global = true)]
    pub n_att: Option<usize>,
    /// Question-reflection rounds per analysis section (0 disables).
    #[arg(long, global = true)]
    pub reflection_rounds: Option<u32>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build multi-dimensional reports for every item.
    Analyze {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the cross-domain validation task set.
    Tasks {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize decision rules on validation tasks.
    Optimize {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        reports: PathBuf,
        /// Run directory for the checkpoint, ledger and rules.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate rules on a target domain, or run leave-one-domain-out.
    Eval {
        /// Target items, or the whole corpus with --lodo.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        reports: PathBuf,
        /// Source items for demonstrations (single-target mode).
        #[arg(long, required_unless_present = "lodo")]
        sources: Option<PathBuf>,
        /// Rules artifact from `optimize` (single-target mode).
        #[arg(long, required_unless_present = "lodo")]
        rules: Option<PathBuf>,
        #[arg(long)]
        lodo: bool,
        /// Use the initial rule alone (with --lodo).
        #[arg(long)]
        skip_optimization: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search the validation task count over the source domains.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        reports: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        candidates: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

impl GlobalArgs {
    pub fn run_config(&self) -> Result<RunConfig, Failure> {
        let mut config = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(w) = self.workers {
            config.workers = Some(w);
        }
        if let Some(dir) = &self.cache_dir {
            config.cache_dir = Some(dir.clone());
        }
        if let Some(k) = self.k {
            config.optimizer.k = k;
        }
        if let Some(n) = self.n_tasks {
            config.tasks.n_tasks = n;
        }
        if let Some(n) = self.n_iter {
            config.optimizer.n_iter_max = n;
        }
        if let Some(n) = self.n_att {
            config.optimizer.n_att_max = n;
        }
        if let Some(r) = self.reflection_rounds {
            config.analysis.reflection_rounds = r;
        }
        if let Some(spec) = &self.provider {
            config.provider = Some(commands::parse_provider_flag(spec, config.provider.take())?);
        }
        if config.workers == Some(0) {
            return Err(Failure::usage("--workers must be at least 1"));
        }
        Ok(config)
    }
}

/// Parses `args` and runs the command. `provider` replaces the configured
/// provider stack when given.
pub fn run_args<I, T>(args: I, provider: Option<Arc<dyn ChatProvider>>) -> Result<(), Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Failure::usage(e.to_string()))?;
    let config = cli.global.run_config()?;
    commands::run(&cli, config, provider)
}

pub fn main_entry() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { error::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    match cli
        .global
        .run_config()
        .and_then(|config| commands::run(&cli, config, None))
    {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.to_json());
            ExitCode::from(f.code)
        }
    }
}
