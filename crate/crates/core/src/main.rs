use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pbnn::experiment::{self, ExperimentConfig, Overrides};
use pbnn::samplers::SamplerKind;
use pbnn::Result;

#[derive(Parser)]
#[command(name = "pbnn", version, about = "Penalty Metropolis-Hastings for Bayesian neural networks from mini-batch loss estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the double pendulum and write the trajectory CSV and sidecar.
    GenerateData(Common),
    /// Run one sampler and evaluate it on the train and test splits.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run all models over several seeds and write the summary table.
    Benchmark(Common),
    /// Run PBNN over a list of batch sizes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated batch sizes.
        #[arg(long, value_delimiter = ',')]
        batch_sizes: Option<Vec<usize>>,
    },
    /// Check the acceptance rule against analytic oracles.
    Validate(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Trajectory CSV (defaults to <out>/pendulum.csv).
    #[arg(long)]
    data: Option<PathBuf>,
    /// One of vanilla, tempered, batched, sgld, pbnn.
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    num_batches: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    n_steps: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    /// Fixed proposal scale (skips tuning).
    #[arg(long)]
    step: Option<f64>,
    /// Number of benchmark seeds.
    #[arg(long)]
    replicates: Option<usize>,
}

impl Common {
    fn resolve(&self, sweep_batch_sizes: Option<Vec<usize>>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seed: self.seed,
            out_dir: self.out.clone(),
            data: self.data.clone(),
            sampler: self.sampler,
            batch_size: self.batch_size,
            num_batches: self.num_batches,
            workers: self.workers,
            n_steps: self.n_steps,
            burn_in: self.burn_in,
            thin: self.thin,
            step: self.step,
            replicates: self.replicates,
            sweep_batch_sizes,
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenerateData(c) => {
            let out = experiment::cmd_generate_data(&c.resolve(None)?)?;
            println!("wrote {} observations ({} supervised items) to {}", out.n_observations, out.n_items, out.csv.display());
        }
        Command::Run { common, resume } => {
            let out = experiment::cmd_run(&common.resolve(None)?, resume.as_deref())?;
            print!("{}", std::fs::read_to_string(&out.report)?);
        }
        Command::Benchmark(c) => {
            let out = experiment::cmd_benchmark(&c.resolve(None)?)?;
            print!("{}", std::fs::read_to_string(&out.summary)?);
        }
        Command::Sweep { common, batch_sizes } => {
            let out = experiment::cmd_sweep(&common.resolve(batch_sizes)?)?;
            print!("{}", std::fs::read_to_string(&out.csv)?);
        }
        Command::Validate(c) => {
            let out = experiment::cmd_validate(&c.resolve(None)?)?;
            print!("{}", out.csv);
            return Ok(out.all_pass);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("validation failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(experiment::exit_code(&e) as u8)
        }
    }
}
