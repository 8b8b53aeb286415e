use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lada::embedding::SyntheticParams;
use lada::error::{LadaError, Result};
use lada::harness::{self, RunConfig};
use lada::inference::InferenceConfig;
use lada::trainer::{load_checkpoint, save_checkpoint};

/// Continual learning of per-class memory blocks on frozen embeddings.
#[derive(Parser)]
#[command(name = "lada", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic task stream and a matching benchmark.toml.
    GenSynthetic(GenArgs),
    /// Train every task in order, evaluating all tasks after each one.
    RunBenchmark(RunArgs),
    /// Train the next tasks of a run and save a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test file.
    Eval(EvalArgs),
    /// Print what a checkpoint contains.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    tasks: u64,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    classes_per_task: u64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    dim: u64,
    #[arg(long, default_value_t = 32, value_parser = clap::value_parser!(u64).range(1..))]
    train_per_class: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    test_per_class: u64,
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    #[arg(long, default_value_t = 0.5)]
    text_noise: f64,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. --set epochs=5. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        RunConfig::load(&self.config, &overrides)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint directory to write.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Continue from this checkpoint instead of starting fresh.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Train at most this many tasks.
    #[arg(long)]
    tasks: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = lada::inference::DEFAULT_ALPHA)]
    alpha: f64,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

fn thread_limit() -> Result<()> {
    match std::env::var("LADA_THREADS") {
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .map_err(|_| LadaError::Config(format!("LADA_THREADS={v:?} is not a positive integer")))?;
            harness::set_thread_limit(n)
        }
        Err(_) => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    thread_limit()?;
    match cli.command {
        Command::GenSynthetic(a) => {
            let params = SyntheticParams {
                seed: a.seed,
                tasks: a.tasks as usize,
                classes_per_task: a.classes_per_task as usize,
                dim: a.dim as usize,
                train_per_class: a.train_per_class as usize,
                test_per_class: a.test_per_class as usize,
                separation: a.separation,
                text_noise: a.text_noise,
            };
            let cfg = harness::write_synthetic(&params, &a.out)?;
            println!("wrote {}", cfg.display());
        }
        Command::RunBenchmark(a) => {
            let cfg = a.config.load()?;
            let start = Instant::now();
            let outcome = harness::run_benchmark(&cfg, &a.out)?;
            print!("{}", outcome.matrix.to_csv());
            let m = &outcome.summary.metrics;
            if let Some(t) = m.transfer.mean {
                println!("transfer {t:.4}");
            }
            println!("average {:.4}", m.average.mean);
            println!("last {:.4}", m.last.mean);
            eprintln!("finished in {:.1} s", start.elapsed().as_secs_f64());
        }
        Command::Train(a) => {
            let cfg = a.config.load()?;
            let resume = a.resume.as_deref().map(load_checkpoint).transpose()?;
            let (model, reports) = harness::train_tasks(&cfg, resume, a.tasks)?;
            for r in &reports {
                let last = r.epoch_losses.last().map_or(f64::NAN, |l| l.total);
                println!("task {}: {} steps, final loss {last:.4}", r.task_id, r.steps);
            }
            save_checkpoint(&model, &a.checkpoint)?;
        }
        Command::Eval(a) => {
            let infer = InferenceConfig { alpha: a.alpha };
            infer.validate()?;
            let report = harness::eval_checkpoint(&a.checkpoint, &a.test, &infer)?;
            let json = report.to_json_string();
            print!("{json}");
            if let Some(out) = a.out {
                std::fs::write(&out, json).map_err(|e| LadaError::Io { path: out, source: e })?;
            }
        }
        Command::Inspect(a) => {
            let model = load_checkpoint(&a.checkpoint)?;
            print!("{}", harness::inspect(&model));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}
