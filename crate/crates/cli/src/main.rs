use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::{error, info};

use fedast::harness::{compare, lr_warnings, run_experiment, ExperimentConfig, ExperimentSummary};
use fedast::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_TARGET: u8 = 3;

#[derive(Parser)]
#[command(name = "fedast", version, about = "Multi-task asynchronous federated training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated simulations and write metrics plus summary.json
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config's base seed
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's replica count
        #[arg(long)]
        runs: Option<usize>,
        /// Exit with code 3 when any task misses its target in any replica
        #[arg(long)]
        strict_target: bool,
    },
    /// Compare two configurations task by task
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        /// Run both sides on the seeds and replica count of `a`
        #[arg(long)]
        paired: bool,
        /// Directory for per-side metrics, curves and comparison.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse a config and check its learning rates
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn fail(e: Error) -> ExitCode {
    error!("{e}");
    eprintln!("error: {e}");
    ExitCode::from(if e.is_config_error() { EXIT_CONFIG } else { EXIT_RUNTIME })
}

fn print_summary(s: &ExperimentSummary) {
    println!("{:>6} {:>12} {:>8} {:>12} {:>12}", "task", "mean_time", "reached", "final_loss", "final_acc");
    for t in &s.tasks {
        let reached = t.time_to_target.iter().filter(|x| x.reached).count();
        println!(
            "{:>6} {:>12.4} {:>5}/{:<2} {:>12.6} {:>12.6}",
            t.task_id, t.mean_time_to_target, reached, s.runs, t.final_loss_mean, t.final_accuracy_mean
        );
    }
    println!("all targets: mean time {:.4}", s.mean_all_targets);
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out, seed, runs, strict_target } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(r) = runs {
                cfg.runs = r;
            }
            let summary = match run_experiment(&cfg, Some(&out)) {
                Ok((s, _)) => s,
                Err(e) => return fail(e),
            };
            print_summary(&summary);
            info!("outputs in {}", out.display());
            if strict_target && !summary.all_reached() {
                eprintln!("target not reached");
                return ExitCode::from(EXIT_TARGET);
            }
            ExitCode::SUCCESS
        }
        Command::Compare { a, b, paired, out } => {
            let (ca, cb) = match (ExperimentConfig::load(&a), ExperimentConfig::load(&b)) {
                (Ok(x), Ok(y)) => (x, y),
                (Err(e), _) | (_, Err(e)) => return fail(e),
            };
            let report = match compare(&ca, &cb, paired, out.as_deref()) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            println!("{:>6} {:>12} {:>12} {:>9} {:>12}", "task", "a_time", "b_time", "gain_%", "loss_delta");
            for t in &report.tasks {
                println!(
                    "{:>6} {:>12.4} {:>12.4} {:>9.2} {:>12.6}",
                    t.task_id, t.a_mean_time, t.b_mean_time, t.gain_percent, t.final_loss_delta
                );
            }
            println!("all targets: gain {:.2}%", report.all_targets_gain_percent);
            ExitCode::SUCCESS
        }
        Command::Validate { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(e),
            };
            let smooth = match fedast::harness::build_workload::<f64>(&cfg, cfg.seed) {
                Ok(w) => w.tasks.iter().map(|t| t.smoothness).collect::<Vec<_>>(),
                Err(e) => return fail(e),
            };
            let warnings = lr_warnings(&cfg, &smooth);
            for w in &warnings {
                println!("warning: {w}");
            }
            println!("{}: ok ({} task(s), {} warning(s))", config.display(), cfg.tasks.len(), warnings.len());
            ExitCode::SUCCESS
        }
    }
}
