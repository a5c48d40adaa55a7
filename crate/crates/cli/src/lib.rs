//! `sohfuse`: train Bayesian CNN pools on discharge cycles, fuse them by
//! stacking and score the forecasts.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{RunConfig, Strategy};
pub use error::{CliError, Stage};

/// Environment variable holding the default run directory.
pub const OUT_ENV: &str = "SOHFUSE_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "sohfuse",
    version,
    about = "Probabilistic battery capacity forecasting with stacked Bayesian CNNs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,

    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads. Defaults to one per battery for `train`, one otherwise.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    /// Run directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the leave-one-out model pools.
    Train,
    /// Score baseline, point stacking and distribution stacking per held-out battery.
    Evaluate {
        /// Held-out battery; repeatable. Defaults to `test_batteries`.
        #[arg(long)]
        battery: Vec<String>,
    },
    /// Write one-step-ahead forecasts with the configured method.
    Forecast {
        #[arg(long)]
        battery: Vec<String>,
        /// Cycle CSV to forecast instead of the battery's own cycles.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Score the stacked ensemble at several input-noise levels.
    NoiseSweep {
        #[arg(long)]
        battery: Vec<String>,
        /// Comma-separated noise levels. Defaults to `sweep_sigmas`.
        #[arg(long, value_delimiter = ',')]
        sigmas: Vec<f64>,
    },
    /// Print the results and file inventory of a run directory.
    Report,
}

impl Cli {
    /// Defaults, then `SOHFUSE_OUT`, the config file, `--set`, and the
    /// dedicated flags, each overriding the previous.
    pub fn resolve_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(out) = std::env::var_os(OUT_ENV) {
            cfg.out = PathBuf::from(out);
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
            cfg.apply_text(&text)?;
        }
        for s in &self.set {
            cfg.apply_override(s)?;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        let batteries = match &self.command {
            Command::Evaluate { battery }
            | Command::Forecast { battery, .. }
            | Command::NoiseSweep { battery, .. } => battery,
            _ => &Vec::new(),
        };
        if !batteries.is_empty() {
            cfg.test_batteries = batteries.clone();
        }
        if let Command::NoiseSweep { sigmas, .. } = &self.command {
            if !sigmas.is_empty() {
                cfg.sweep_sigmas = sigmas.clone();
            }
        }
        Ok(cfg)
    }
}

/// Runs a parsed command line and returns the summary for stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = cli.resolve_config()?;
    if let Command::Report = cli.command {
        return commands::report(&cfg.out);
    }
    let ctx = commands::Context::open(cfg)?;
    let workers = match cli.command {
        Command::Train => cli.workers.unwrap_or(ctx.dataset.battery_count()),
        _ => cli.workers.unwrap_or(1),
    };
    if workers == 0 {
        return Err(CliError::config("--workers must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::config(format!("worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Train => commands::train(ctx),
        Command::Evaluate { .. } => commands::evaluate(ctx),
        Command::Forecast { input, .. } => commands::forecast(ctx, input.as_deref()),
        Command::NoiseSweep { .. } => {
            let sigmas = ctx.cfg.sweep_sigmas.clone();
            commands::noise_sweep(ctx, &sigmas)
        }
        Command::Report => unreachable!("handled above"),
    })
}

/// [`run`] on an argument list, as the binary does.
pub fn run_args<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::config(e.to_string()))?;
    run(&cli)
}
