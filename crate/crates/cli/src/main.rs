use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use lamcts::partition::KernelChoice;
use lamcts_cli::compare::compare_files;
use lamcts_cli::runner::run_experiment;
use lamcts_cli::summary::verify;
use lamcts_cli::{ExperimentConfig, Method, Overrides};

#[derive(Parser)]
#[command(
    name = "lamcts",
    version,
    about = "Run and compare LA-MCTS experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run repeats of one method on one benchmark.
    Run(RunArgs),
    /// Rank two or more summaries by final median.
    Compare {
        #[arg(required = true, num_args = 2..)]
        summaries: Vec<PathBuf>,
    },
    /// Recompute a summary from its trace files.
    Verify { summary: PathBuf },
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cp: Option<f64>,
    #[arg(long)]
    theta: Option<usize>,
    #[arg(long, value_parser = parse_kernel)]
    kernel: Option<KernelChoice>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: lamcts_cli::CliError| e.to_string())
}

fn parse_kernel(s: &str) -> Result<KernelChoice, String> {
    s.parse().map_err(|e: lamcts::Error| e.to_string())
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    Overrides {
        objective: args.objective,
        dim: args.dim,
        method: args.method,
        budget: args.budget,
        repeats: args.repeats,
        seed: args.seed,
        cp: args.cp,
        theta: args.theta,
        kernel: args.kernel,
        out: args.out,
    }
    .apply(&mut cfg);
    let out = run_experiment(&cfg)?;
    println!("{}", out.summary_path.display());
    for c in &out.summary.checkpoints {
        println!(
            "  {:>4} evals: median {:.6e}  IQR {:.3e}",
            c.evaluations, c.median, c.iqr
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Compare { summaries } => {
            print!("{}", compare_files(&summaries)?);
            Ok(())
        }
        Command::Verify { summary } => {
            let s = verify(&summary)?;
            println!(
                "ok: {} repeats of {} on {}-d{} match their traces",
                s.seeds.len(),
                s.method,
                s.objective,
                s.dim
            );
            Ok(())
        }
    }
}
