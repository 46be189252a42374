use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use evocompress::commands::{cmd_flops, cmd_pareto, cmd_search, cmd_thresholds, RunOptions};
use evocompress::config::RunConfig;
use evocompress::{AppError, Result};

/// Learns per-layer compression settings by adaptive sampling.
#[derive(Parser)]
#[command(name = "evocompress", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Concurrent evaluations.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Overrides `engine.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl RunArgs {
    fn options(&self) -> RunOptions {
        RunOptions {
            workers: self.workers,
            seed: self.seed,
            out: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the evolutionary search.
    Search(RunArgs),
    /// Per-gene compression thresholds at the configured accuracy floor.
    Thresholds(RunArgs),
    /// Per-layer and total MACs, optionally after applying a plan.
    Flops {
        #[arg(long, required_unless_present = "config", conflicts_with = "config")]
        model: Option<PathBuf>,
        /// Take the model from a run config instead.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// One search per accuracy threshold plus the uniform-pruning baseline.
    Pareto {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated accuracy thresholds; defaults to `pareto_thresholds`.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::Search(args) => {
            let config = RunConfig::load(&args.config)?;
            let manifest = cmd_search(&config, &args.options())?;
            let s = &manifest.summary;
            println!(
                "best score {:.6e}: accuracy {} (uncompressed {}), flops ratio {:.6}",
                s.score, s.accuracy, s.base_accuracy, s.flops_ratio
            );
            println!("wrote {}", args.out.display());
        }
        Cmd::Thresholds(args) => {
            let config = RunConfig::load(&args.config)?;
            let theta = cmd_thresholds(&config, &args.options())?;
            println!("{}", serde_json::to_string(&theta).expect("serializable"));
        }
        Cmd::Flops {
            model,
            config,
            plan,
            json,
        } => {
            let model = match (model, config) {
                (Some(m), _) => m,
                (None, Some(c)) => RunConfig::load(&c)?.model,
                (None, None) => return Err(AppError::Usage("flops needs --model or --config".into())),
            };
            let report = cmd_flops(&model, plan.as_deref())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            } else {
                print!("{report}");
            }
        }
        Cmd::Pareto { run, thresholds } => {
            let config = RunConfig::load(&run.config)?;
            let rows = cmd_pareto(&config, thresholds.as_deref(), &run.options())?;
            println!("wrote {} rows to {}", rows.len(), run.out.join("pareto.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
