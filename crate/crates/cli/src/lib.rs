//! Command-line driver: argument parsing, config merging and the
//! subcommands. [`run_command`] is the whole program minus process exit.

mod commands;
pub mod runconfig;
pub mod selfcheck;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use zsembed_core::Error;

pub use runconfig::{DataSource, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "zsembed",
    version,
    about = "Train and evaluate visual-semantic embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model; writes a checkpoint, the loss trace and a test report.
    Train(Common),
    /// Load a checkpoint and evaluate it on the test images.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory [default: <out>/checkpoint].
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train every ablation variant and tabulate test top-1 and mAP.
    Ablate(Common),
    /// Retrain over a grid of visible unlabeled-pool fractions.
    SweepFraction {
        #[command(flatten)]
        common: Common,
        /// Fractions as `start:stop:step`, both ends inclusive.
        #[arg(long, default_value = "0:1:0.1")]
        fraction_grid: String,
    },
    /// Pick beta and lambda on a held-out split of the training classes.
    Grid(Common),
    /// Write a synthetic dataset to files.
    Synth(Common),
    /// Run the gradient suites and oracle comparisons.
    Selfcheck,
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic preset name or a data directory.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    /// Worker threads for independent runs; 0 means one per core.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// `test` or `all`.
    #[arg(long)]
    search_space: Option<String>,
}

impl Common {
    /// Config file values overridden by flags.
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.data {
            cfg.data = Some(DataSource::from_arg(d));
        }
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(v) = &self.variant {
            cfg.set("variant", v)?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(s) = &self.search_space {
            cfg.set("search_space", s)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1)
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
///
/// Exit codes: 0 success, 1 usage, data or config error, 2 training
/// divergence.
pub fn run_command<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Train(c) => c.resolve().and_then(|cfg| commands::train(&cfg)),
        Command::Eval { common, checkpoint } => common
            .resolve()
            .and_then(|cfg| commands::eval(&cfg, checkpoint.as_deref())),
        Command::Ablate(c) => c.resolve().and_then(|cfg| commands::ablate(&cfg, c.jobs())),
        Command::SweepFraction {
            common,
            fraction_grid,
        } => common
            .resolve()
            .and_then(|cfg| commands::sweep_fraction(&cfg, fraction_grid)),
        Command::Grid(c) => c.resolve().and_then(|cfg| commands::grid(&cfg)),
        Command::Synth(c) => c.resolve().and_then(|cfg| commands::synth(&cfg)),
        Command::Selfcheck => commands::selfcheck(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parses `start:stop:step` into an inclusive list.
pub fn parse_fraction_grid(s: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::Usage(format!("fraction grid must be start:stop:step, got {s:?}"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0)
        || !(0.0..=1.0).contains(&start)
        || !(0.0..=1.0).contains(&stop)
        || start > stop
    {
        return Err(bad());
    }
    let n = ((stop - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|k| start + k as f64 * step)
        .map(|p| (p * 1e9).round() / 1e9)
        .collect())
}
