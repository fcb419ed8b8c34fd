use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndx_cli::commands::{self, CliError};
use ndx_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "ndx", version, about = "Staged EEG classifier training on synthetic corpora")]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides corpus.seed and train.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides paths.out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the stage-1 and stage-2 corpora.
    Synth,
    /// Run one training stage and write a checkpoint plus metrics report.
    Train {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// addition, reuse, full_parameter or none (stage 2 only).
        #[arg(long)]
        policy: Option<String>,
        /// Stage-1 checkpoint to continue from.
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Print metrics of a checkpoint on one split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run the ablation matrix and print mean test metrics per row.
    Ablation,
    /// Run the built-in conformance suites.
    Selfcheck {
        /// Doubles the analytic gradient of one operation group.
        #[arg(long, hide = true)]
        plant_fault: Option<String>,
    },
    /// Print every configuration key with its default.
    Defaults,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ndx_core::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.set("paths.out", &out.to_string_lossy())?;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth => commands::synth(&cfg),
        Command::Train { stage, policy, from } => commands::train(&cfg, *stage, policy.as_deref(), from.as_deref()),
        Command::Eval { ckpt, split } => commands::eval(&cfg, ckpt, split),
        Command::Ablation => commands::ablation(&cfg),
        Command::Selfcheck { plant_fault } => commands::selfcheck(plant_fault.as_deref()),
        Command::Defaults => {
            print!("{}", RunConfig::describe());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ndx: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
