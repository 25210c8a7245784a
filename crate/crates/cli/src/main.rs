use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use defect_chain_cli::{
    cmd_compare, cmd_extract, cmd_infer, cmd_propagate, cmd_synth, exit, CliError, PipelineConfig, StageOutcome,
};

#[derive(Parser)]
#[command(name = "defect-chain", version, about = "Bayesian wrinkle defect pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "DEFECT_CHAIN_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic B-scans of prior-drawn wrinkles.
    Synth {
        /// Number of scans; overrides the config.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Extract misalignment samples from scans.
    Extract {
        /// Scans to analyse; default is the configured or synthetic scans.
        images: Vec<PathBuf>,
    },
    /// Fit observations, build the prior and sample the posterior.
    Infer,
    /// Propagate posterior samples through the strength model.
    Propagate,
    /// Compare prior and posterior strength distributions.
    Compare,
}

fn run(cli: Cli) -> Result<StageOutcome, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    match cli.command {
        Command::Synth { count } => cmd_synth(&cfg, count),
        Command::Extract { images } => cmd_extract(&cfg, (!images.is_empty()).then_some(images)),
        Command::Infer => cmd_infer(&cfg),
        Command::Propagate => cmd_propagate(&cfg),
        Command::Compare => cmd_compare(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            for w in &outcome.manifest.warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = e.exit_code();
            debug_assert_ne!(code, exit::SUCCESS);
            ExitCode::from(code as u8)
        }
    }
}
