//! Experiment execution and artifact emission: single runs with report
//! CSV, training log, and checkpoints; corruption sweeps with a combined
//! summary table and per-strategy plot data.
//!
//! Every artifact is deterministic given the configuration: floats are
//! written in shortest round-trip form and rows follow the declared
//! strategy and corruption order, so reruns produce byte-identical files.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use splitfed::aggregation::Strategy;
use splitfed::dataset::{
    apply_corruption, generate_synthetic, partition_clients, PartitionedData, CLASS_NAMES,
};
use splitfed::error::{Result, SplitFedError};
use splitfed::metrics::EvalReport;
use splitfed::numerics::stable_mean;
use splitfed::orchestrator::{execute, RunOutcome, RunSettings, TrainingLog};

use crate::config::Config;

/// One row of the result table: a strategy at a corruption level.
#[derive(Clone, Debug)]
pub struct ResultRow {
    pub strategy: Strategy,
    pub corrupted: usize,
    pub loss: f64,
    pub accuracy: f64,
    /// Mean Jaccard per foreground class (ZP, TE, ICM, BL); `None` when no
    /// evaluated sample defined the class.
    pub jaccard: [Option<f64>; 4],
}

impl ResultRow {
    fn from_report(strategy: Strategy, corrupted: usize, report: &EvalReport) -> ResultRow {
        let mut jaccard = [None; 4];
        for (slot, class) in jaccard.iter_mut().zip(1u8..) {
            *slot = report.class_jaccard(class);
        }
        ResultRow {
            strategy,
            corrupted,
            loss: report.loss,
            accuracy: report.accuracy,
            jaccard,
        }
    }
}

/// Header matching [`csv_line`]; class columns use the canonical names.
pub fn csv_header() -> String {
    format!("strategy,k,loss,acc,{}", CLASS_NAMES[1..].join(","))
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v}"),
        None => "nan".into(),
    }
}

/// One CSV row; floats in shortest round-trip form, absent Jaccards as
/// `nan`.
pub fn csv_line(row: &ResultRow) -> String {
    format!(
        "{},{},{},{},{}",
        row.strategy,
        row.corrupted,
        row.loss,
        row.accuracy,
        row.jaccard.iter().map(|&v| fmt_opt(v)).collect::<Vec<_>>().join(",")
    )
}

/// Builds the synthetic dataset for one experiment cell: generate from the
/// seed, partition, and corrupt `k` clients' ground truth.
pub fn build_data(config: &Config, k: usize, seed: u64) -> Result<PartitionedData> {
    let samples =
        generate_synthetic(seed, config.total_samples, config.image_size, config.image_size)?;
    let mut data = partition_clients(samples, &config.clients, seed)?;
    let ids = config.corrupted_clients(k).map_err(SplitFedError::Config)?;
    if !ids.is_empty() {
        let spec = config.corruption().map_err(SplitFedError::Config)?;
        apply_corruption(&mut data, &ids, &spec)?;
    }
    Ok(data)
}

/// Artifacts of a single experiment run.
#[derive(Debug)]
pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub row: ResultRow,
    pub outcome: RunOutcome,
}

/// Runs one experiment per the config and writes `report.csv`,
/// `log.jsonl`, and the best global model's checkpoints into `out_dir`.
pub fn run_experiment(config: &Config, out_dir: &Path) -> Result<RunArtifacts> {
    let data = build_data(config, config.corrupted, config.seed)?;
    let settings = config.run_settings();
    let outcome = execute(&settings, &data, config.transport)?;
    let row = ResultRow::from_report(config.strategy, config.corrupted, &outcome.report);
    fs::create_dir_all(out_dir)?;
    fs::write(
        out_dir.join("report.csv"),
        format!("{}\n{}\n", csv_header(), csv_line(&row)),
    )?;
    fs::write(out_dir.join("log.jsonl"), outcome.log.to_jsonl()?)?;
    fs::write(out_dir.join("checkpoint_client.bin"), outcome.best_client.to_bytes())?;
    fs::write(out_dir.join("checkpoint_server.bin"), outcome.best_server.to_bytes())?;
    Ok(RunArtifacts { out_dir: out_dir.to_path_buf(), row, outcome })
}

/// One completed sweep cell: a (strategy, corrupted-count, seed) run.
#[derive(Clone, Debug)]
pub struct CellOutcome {
    pub strategy: Strategy,
    pub corrupted: usize,
    pub seed: u64,
    pub report: EvalReport,
    pub log: TrainingLog,
}

/// Runs every (strategy, corrupted-count, seed) cell. Cells are
/// independent — each derives its own data and models from its seed — so
/// they may run in parallel; results keep the declared order.
pub fn sweep_cells(
    config: &Config,
    strategies: &[Strategy],
    corrupted_counts: &[usize],
    seeds: &[u64],
) -> Result<Vec<CellOutcome>> {
    let mut cells = Vec::new();
    for &strategy in strategies {
        for &corrupted in corrupted_counts {
            for &seed in seeds {
                cells.push((strategy, corrupted, seed));
            }
        }
    }
    cells
        .into_par_iter()
        .map(|(strategy, corrupted, seed)| {
            let data = build_data(config, corrupted, seed)?;
            let settings = RunSettings { strategy, seed, ..config.run_settings() };
            let outcome = execute(&settings, &data, config.transport)?;
            Ok(CellOutcome {
                strategy,
                corrupted,
                seed,
                report: outcome.report,
                log: outcome.log,
            })
        })
        .collect()
}

/// Seed-averaged rows in declared (strategy, corrupted) order. A class's
/// Jaccard averages over the seeds that defined it; `None` if none did.
pub fn summarize(
    cells: &[CellOutcome],
    strategies: &[Strategy],
    corrupted_counts: &[usize],
) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for &strategy in strategies {
        for &corrupted in corrupted_counts {
            let group: Vec<&CellOutcome> = cells
                .iter()
                .filter(|c| c.strategy == strategy && c.corrupted == corrupted)
                .collect();
            let mut loss: Vec<f64> = group.iter().map(|c| c.report.loss).collect();
            let mut acc: Vec<f64> = group.iter().map(|c| c.report.accuracy).collect();
            let mut jaccard = [None; 4];
            for (slot, class) in jaccard.iter_mut().zip(1u8..) {
                let mut values: Vec<f64> =
                    group.iter().filter_map(|c| c.report.class_jaccard(class)).collect();
                if !values.is_empty() {
                    *slot = Some(stable_mean(&mut values));
                }
            }
            rows.push(ResultRow {
                strategy,
                corrupted,
                loss: stable_mean(&mut loss),
                accuracy: stable_mean(&mut acc),
                jaccard,
            });
        }
    }
    rows
}

/// Everything a sweep leaves behind.
#[derive(Debug)]
pub struct SweepArtifacts {
    pub out_dir: PathBuf,
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellOutcome>,
}

/// Runs the sweep and writes `summary.csv` (one seed-averaged row per
/// strategy and corruption level), `plot_<strategy>.dat` (corruption level
/// vs accuracy), and `logs/<strategy>_k<k>_seed<seed>.jsonl`.
pub fn sweep(
    config: &Config,
    strategies: &[Strategy],
    corrupted_counts: &[usize],
    seeds: &[u64],
    out_dir: &Path,
) -> Result<SweepArtifacts> {
    if strategies.is_empty() || corrupted_counts.is_empty() || seeds.is_empty() {
        return Err(SplitFedError::Config(
            "a sweep needs at least one strategy, corruption level, and seed".into(),
        ));
    }
    let cells = sweep_cells(config, strategies, corrupted_counts, seeds)?;
    let rows = summarize(&cells, strategies, corrupted_counts);

    let logs_dir = out_dir.join("logs");
    fs::create_dir_all(&logs_dir)?;
    for cell in &cells {
        let name = format!("{}_k{}_seed{}.jsonl", cell.strategy, cell.corrupted, cell.seed);
        fs::write(logs_dir.join(name), cell.log.to_jsonl()?)?;
    }

    let mut summary = csv_header();
    summary.push('\n');
    for row in &rows {
        summary.push_str(&csv_line(row));
        summary.push('\n');
    }
    fs::write(out_dir.join("summary.csv"), summary)?;

    for &strategy in strategies {
        let mut plot = String::new();
        for row in rows.iter().filter(|r| r.strategy == strategy) {
            plot.push_str(&format!("{} {}\n", row.corrupted, row.accuracy));
        }
        fs::write(out_dir.join(format!("plot_{strategy}.dat")), plot)?;
    }
    Ok(SweepArtifacts { out_dir: out_dir.to_path_buf(), rows, cells })
}
