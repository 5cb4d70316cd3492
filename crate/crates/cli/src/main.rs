use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sizeshape_cli::{cmd_fit, cmd_fpca, cmd_simulate, cmd_summarize, Options};

/// Bayesian size-and-shape functional mixed model.
///
/// Log verbosity is read from SIZESHAPE_LOG (for example `info` or `debug`).
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the `seed` key.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic dataset and its truth file.
    Simulate(Common),
    /// Run the sampler on a dataset.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Independent chains with consecutive seeds.
        #[arg(long, default_value_t = 1)]
        chains: usize,
    },
    /// Posterior summaries from a draws file.
    Summarize {
        #[command(flatten)]
        common: Common,
        /// Draws file; defaults to the `draws` key.
        #[arg(long)]
        draws: Option<PathBuf>,
        /// Truth file for Δ_μ; defaults to the `truth` key.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Alignment-based FPCA and the projection residual sweep.
    Fpca(Common),
}

fn options(c: Common, chains: usize) -> Options {
    Options {
        config: c.config,
        seed: c.seed,
        out: c.out,
        chains,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SIZESHAPE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => cmd_simulate(&options(c, 1)),
        Command::Fit { common, chains } => cmd_fit(&options(common, chains)),
        Command::Summarize { common, draws, truth } => {
            cmd_summarize(&options(common, 1), draws.as_deref(), truth.as_deref())
        }
        Command::Fpca(c) => cmd_fpca(&options(c, 1)),
    };
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
