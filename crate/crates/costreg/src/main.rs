//! `costreg` — train, evaluate, sweep, and plot cost-regulated RL runs.
//!
//! Exit codes: 0 success, 2 usage/config error, 3 artifact/version error,
//! 4 numeric abort.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use costreg::artifact::DirSink;
use costreg::config::{load_config_file, parse_overrides, resolve_config};
use costreg::plot::{render, PlotSpec};
use costreg::sweep::{run_sweep, SweepAxis};
use costreg_core::checkpoint::Checkpoint;
use costreg_core::train::{evaluate, train};
use costreg_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "costreg", version, about = "Cost-regulated safe RL: training, evaluation, sweeps, and plots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its artifact directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint with frozen parameters.
    Eval(EvalArgs),
    /// Run an ablation sweep over one axis.
    Sweep(SweepArgs),
    /// Render an SVG chart (mean and std band) from run metrics.
    Plot(PlotArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: PathBuf,
    /// Seed override (highest precedence).
    #[arg(long)]
    seed: Option<u64>,
    /// Output run directory.
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
    /// Config overrides, e.g. --set total_steps=5000 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file written by `costreg train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 10)]
    episodes: u64,
    /// Use the policy's deterministic head instead of sampling.
    #[arg(long)]
    deterministic: bool,
    /// Evaluation seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// One of: lambda, beta, noise, scaling_mode.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values, e.g. 5,10,15,30,50.
    #[arg(long)]
    values: String,
    /// Number of seeds per value (base seed, base+1, ...).
    #[arg(long, default_value_t = 3)]
    seeds: u64,
    #[arg(long, default_value = "runs/sweep")]
    out: PathBuf,
    /// Parallel worker threads.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Metric column: ep_return, cum_cost, or ret_over_logcost.
    #[arg(long)]
    metric: String,
    /// Run directories containing metrics.csv (repeatable).
    #[arg(long = "run", required = true)]
    runs: Vec<PathBuf>,
    /// Output SVG path; a sibling .csv with the aggregate is written too.
    #[arg(long, default_value = "plot.svg")]
    out: PathBuf,
    /// Trailing moving-average window (1 = none).
    #[arg(long, default_value_t = 1)]
    smooth: usize,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn exit_code_for(error: &CoreError) -> u8 {
    match error {
        CoreError::Config(_) => 2,
        CoreError::Checkpoint(_) | CoreError::CheckpointVersion { .. } => 3,
        CoreError::Numeric(_) => 4,
        CoreError::Internal(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code_for(&error))
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CoreError> {
    let text = load_config_file(&args.config)?;
    let overrides = parse_overrides(&args.sets)?;
    let config = resolve_config(Some(&text), &overrides, args.seed)?;

    let mut sink = DirSink::create(&args.out, &config)?;
    let start = Instant::now();
    let outcome = train(&config, &mut sink)?;
    let elapsed = start.elapsed().as_secs_f64();
    eprintln!("run finished in {elapsed:.1}s -> {}", args.out.display());

    let (final_return, final_cost) = outcome
        .final_metrics
        .as_ref()
        .map(|m| (m.ep_return, m.cum_cost))
        .unwrap_or((0.0, 0.0));
    println!(
        "TRAIN steps={} episodes={} final_return={} cum_cost={} out={}",
        outcome.steps,
        outcome.episodes,
        costreg::format::sig6(final_return),
        costreg::format::sig6(final_cost),
        args.out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CoreError> {
    let bytes = std::fs::read(&args.checkpoint)
        .map_err(|e| CoreError::Checkpoint(format!("cannot read '{}': {e}", args.checkpoint.display())))?;
    let ckpt = Checkpoint::decode(&bytes)?;
    let seed = match args.seed {
        Some(seed) => seed,
        None => std::env::var(costreg::config::SEED_ENV_VAR)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or(0),
    };
    let summary = evaluate(&ckpt, args.episodes, args.deterministic, seed)?;

    println!("metric            mean        std");
    println!(
        "return        {:>10}  {:>9}",
        costreg::format::sig6(summary.mean_return),
        costreg::format::sig6(summary.std_return)
    );
    println!(
        "ep_cost       {:>10}  {:>9}",
        costreg::format::sig6(summary.mean_cost),
        costreg::format::sig6(summary.std_cost)
    );
    println!("violation_rate {:>9}", costreg::format::sig6(summary.violation_rate));
    println!(
        "EVAL episodes={} return_mean={} return_std={} cost_mean={} cost_std={} violation_rate={}",
        summary.episodes,
        costreg::format::sig6(summary.mean_return),
        costreg::format::sig6(summary.std_return),
        costreg::format::sig6(summary.mean_cost),
        costreg::format::sig6(summary.std_cost),
        costreg::format::sig6(summary.violation_rate)
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), CoreError> {
    let text = load_config_file(&args.config)?;
    let overrides = parse_overrides(&args.sets)?;
    let config = resolve_config(Some(&text), &overrides, args.seed)?;
    let axis = SweepAxis::from_name(&args.axis)?;
    let values: Vec<String> = args
        .values
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(CoreError::Config("--values must list at least one value".into()));
    }

    let start = Instant::now();
    let report = run_sweep(&config, axis, &values, args.seeds, &args.out, args.jobs)?;
    eprintln!("sweep finished in {:.1}s", start.elapsed().as_secs_f64());

    let failures: Vec<&costreg::sweep::CellResult> =
        report.cells.iter().filter(|c| c.outcome.is_err()).collect();
    for cell in &failures {
        eprintln!(
            "cell {}={} seed={} failed: {}",
            axis.name(),
            cell.value,
            cell.seed,
            cell.outcome.as_ref().unwrap_err()
        );
    }
    println!(
        "SWEEP axis={} cells={} failures={} summary={}",
        axis.name(),
        report.cells.len(),
        failures.len(),
        report.summary_path.display()
    );
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), CoreError> {
    let spec = PlotSpec {
        metric: args.metric,
        runs: args.runs,
        smoothing_window: args.smooth.max(1),
        output: args.out.clone(),
    };
    let agg = render(&spec)?;
    println!(
        "PLOT metric={} points={} out={}",
        spec.metric,
        agg.steps.len(),
        args.out.display()
    );
    Ok(())
}
