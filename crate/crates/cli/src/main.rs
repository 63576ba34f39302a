//! `splitfed`: desk-scale split-federated learning experiments.
//!
//! `run` executes one experiment and writes its artifacts; `sweep` walks
//! corrupted-client counts across strategies and writes the combined
//! table; `export-data` materializes the synthetic dataset. Configuration
//! errors exit with code 2, runtime failures with 1.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use splitfed::aggregation::Strategy;
use splitfed::dataset::export_dataset;

use splitfed_cli::config::{Config, Overrides};
use splitfed_cli::experiment::{build_data, csv_line, run_experiment, sweep};

#[derive(Parser)]
#[command(name = "splitfed", version, about = "Split-federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write report, log, and checkpoints.
    Run(CommonArgs),
    /// Sweep corrupted-client counts across strategies.
    Sweep(SweepArgs),
    /// Generate the synthetic dataset and write it to disk.
    ExportData(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// naive | fedavg | fedavg-m | qa-splitfed
    #[arg(long)]
    strategy: Option<String>,
    /// Comma-separated per-client sample counts.
    #[arg(long)]
    clients: Option<String>,
    #[arg(long)]
    global_epochs: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
    /// How many clients get corrupted ground truth.
    #[arg(long)]
    corrupted: Option<usize>,
    /// Comma-separated client ids to corrupt (overrides the seed-derived
    /// worst-case choice).
    #[arg(long)]
    corrupt_ids: Option<String>,
    /// Dilation radius in pixels.
    #[arg(long)]
    radius: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    /// inproc | tcp
    #[arg(long)]
    transport: Option<String>,
    /// Output directory (default: runs/run-<unix-seconds>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Comma-separated strategies to sweep (default: all four).
    #[arg(long)]
    strategies: Option<String>,
    /// Highest corrupted-client count (default: all clients).
    #[arg(long)]
    max_corrupted: Option<usize>,
    /// Comma-separated seeds to average over (default: the config seed).
    #[arg(long)]
    seeds: Option<String>,
}

impl CommonArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            strategy: self.strategy.clone(),
            clients: self.clients.clone(),
            global_epochs: self.global_epochs,
            local_epochs: self.local_epochs,
            corrupted: self.corrupted,
            corrupt_ids: self.corrupt_ids.clone(),
            radius: self.radius,
            seed: self.seed,
            transport: self.transport.clone(),
        }
    }

    fn resolve(&self) -> Result<Config, String> {
        Config::resolve(self.config.as_deref(), &self.overrides())
    }

    fn out_dir(&self) -> PathBuf {
        match &self.out {
            Some(dir) => dir.clone(),
            None => {
                let stamp = SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0);
                let mut dir = PathBuf::from(format!("runs/run-{stamp}"));
                let mut tag = 1;
                while dir.exists() {
                    dir = PathBuf::from(format!("runs/run-{stamp}-{tag}"));
                    tag += 1;
                }
                dir
            }
        }
    }
}

fn parse_seeds(config: &Config, flag: Option<&str>) -> Result<Vec<u64>, String> {
    match flag {
        None => Ok(vec![config.seed]),
        Some(raw) => {
            let seeds: Vec<u64> = raw
                .split(',')
                .map(str::trim)
                .filter(|p| !p.is_empty())
                .map(|p| p.parse().map_err(|_| format!("--seeds: {p:?} is not a seed")))
                .collect::<Result<_, String>>()?;
            if seeds.is_empty() {
                return Err("--seeds: need at least one seed".into());
            }
            Ok(seeds)
        }
    }
}

fn parse_strategies(flag: Option<&str>) -> Result<Vec<Strategy>, String> {
    match flag {
        None => Ok(Strategy::ALL.to_vec()),
        Some(raw) => raw
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse().map_err(|e| format!("--strategies: {e}")))
            .collect(),
    }
}

/// Configuration problems exit 2; failures during execution exit 1.
fn config_err(message: String) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::from(2)
}

fn run_err(message: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {message}");
    ExitCode::FAILURE
}

fn cmd_run(args: &CommonArgs) -> ExitCode {
    let config = match args.resolve() {
        Ok(c) => c,
        Err(e) => return config_err(e),
    };
    let out_dir = args.out_dir();
    match run_experiment(&config, &out_dir) {
        Ok(artifacts) => {
            println!("{}", splitfed_cli::experiment::csv_header());
            println!("{}", csv_line(&artifacts.row));
            println!(
                "best global epoch {}; artifacts in {}",
                artifacts.outcome.best_epoch,
                out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => run_err(e),
    }
}

fn cmd_sweep(args: &SweepArgs) -> ExitCode {
    let config = match args.common.resolve() {
        Ok(c) => c,
        Err(e) => return config_err(e),
    };
    let strategies = match parse_strategies(args.strategies.as_deref()) {
        Ok(s) => s,
        Err(e) => return config_err(e),
    };
    let seeds = match parse_seeds(&config, args.seeds.as_deref()) {
        Ok(s) => s,
        Err(e) => return config_err(e),
    };
    let max = args.max_corrupted.unwrap_or(config.clients.len());
    if max > config.clients.len() {
        return config_err(format!(
            "--max-corrupted: cannot corrupt {max} of {} clients",
            config.clients.len()
        ));
    }
    let counts: Vec<usize> = (0..=max).collect();
    let out_dir = args.common.out_dir();
    match sweep(&config, &strategies, &counts, &seeds, &out_dir) {
        Ok(artifacts) => {
            println!("{}", splitfed_cli::experiment::csv_header());
            for row in &artifacts.rows {
                println!("{}", csv_line(row));
            }
            println!("artifacts in {}", out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => run_err(e),
    }
}

fn cmd_export(args: &CommonArgs) -> ExitCode {
    let config = match args.resolve() {
        Ok(c) => c,
        Err(e) => return config_err(e),
    };
    let out_dir = args.out_dir();
    let data = match build_data(&config, config.corrupted, config.seed) {
        Ok(d) => d,
        Err(e) => return run_err(e),
    };
    match export_dataset(Path::new(&out_dir), &data) {
        Ok(()) => {
            let total: usize = config.clients.iter().sum();
            println!(
                "wrote {} client samples and {} test samples to {}",
                total,
                data.test.len(),
                out_dir.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => run_err(e),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::ExportData(args) => cmd_export(args),
    }
}
