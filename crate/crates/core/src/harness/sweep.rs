//! Grid sweeps over selection and noise hyper-parameters.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::NoiseKind;
use crate::selfkd::Method;

use super::config::ExperimentConfig;
use super::run::run_experiment;

pub const SUMMARY_HEADER: &str = "cell_id,eta,b2,noise_kind,noise_rate,method,seed_count,mean_final_acc,std_final_acc";

/// Axes of a sweep. An absent axis keeps the base configuration's value;
/// a present axis must be non-empty. Every cell is run once per seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub eta: Option<Vec<f64>>,
    #[serde(default)]
    pub b2: Option<Vec<f64>>,
    #[serde(default)]
    pub noise_rate: Option<Vec<f64>>,
    #[serde(default)]
    pub method: Option<Vec<Method>>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
}

/// Outcome of one grid point across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub cell_id: usize,
    pub eta: f64,
    pub b2: f64,
    pub noise_kind: NoiseKind,
    pub noise_rate: f64,
    pub method: Method,
    /// Final mean test accuracy of each successful seed, in seed order.
    pub finals: Vec<f64>,
    /// `(seed, error)` of each failed run.
    pub failures: Vec<(u64, String)>,
}

impl SweepCell {
    pub fn failed(&self) -> bool {
        self.finals.is_empty()
    }

    pub fn mean(&self) -> Option<f64> {
        (!self.finals.is_empty()).then(|| self.finals.iter().sum::<f64>() / self.finals.len() as f64)
    }

    /// Sample standard deviation; 0 for a single seed.
    pub fn std(&self) -> Option<f64> {
        let mean = self.mean()?;
        let n = self.finals.len();
        if n < 2 {
            return Some(0.0);
        }
        let ss: f64 = self.finals.iter().map(|v| (v - mean).powi(2)).sum();
        Some((ss / (n - 1) as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub cells: Vec<SweepCell>,
}

impl SweepSummary {
    /// Writes one row per cell. Cells without a successful seed are marked
    /// `failed` in the accuracy columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
        w.write_record(SUMMARY_HEADER.split(','))?;
        for c in &self.cells {
            let (mean, std) = match (c.mean(), c.std()) {
                (Some(m), Some(s)) => (m.to_string(), s.to_string()),
                _ => ("failed".to_string(), "failed".to_string()),
            };
            w.write_record([
                c.cell_id.to_string(),
                c.eta.to_string(),
                c.b2.to_string(),
                c.noise_kind.to_string(),
                c.noise_rate.to_string(),
                c.method.to_string(),
                c.finals.len().to_string(),
                mean,
                std,
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn failures(&self) -> usize {
        self.cells.iter().map(|c| c.failures.len()).sum()
    }
}

fn axis<T: Copy>(values: &Option<Vec<T>>, base: T, name: &str) -> Result<Vec<T>> {
    match values {
        None => Ok(vec![base]),
        Some(v) if v.is_empty() => Err(Error::config(format!("grid.{name}"), "axis is empty")),
        Some(v) => Ok(v.clone()),
    }
}

struct Job {
    cell: usize,
    seed: u64,
    config: ExperimentConfig,
}

/// Runs every grid point for every seed on a pool of `workers` threads.
///
/// With `out_dir`, each run writes into `cell_<id>/seed_<seed>/` and the
/// summary goes to `summary.csv`. A failed run is recorded on its cell and
/// the rest of the grid still runs.
pub fn run_sweep(
    base: &ExperimentConfig,
    grid: &SweepGrid,
    workers: usize,
    out_dir: Option<&Path>,
) -> Result<SweepSummary> {
    base.validate()?;
    let etas = axis(&grid.eta, base.selection.eta, "eta")?;
    let b2s = axis(&grid.b2, base.selection.b2, "b2")?;
    let rates = axis(&grid.noise_rate, base.noise.rate, "noise_rate")?;
    let methods = axis(&grid.method, base.self_kd.method, "method")?;
    let seeds = axis(&grid.seeds, base.seed, "seeds")?;
    if workers == 0 {
        return Err(Error::config("workers", "must be at least 1"));
    }

    let mut cells = Vec::new();
    let mut jobs = Vec::new();
    for &eta in &etas {
        for &b2 in &b2s {
            for &rate in &rates {
                for &method in &methods {
                    let id = cells.len();
                    let mut cfg = base.clone();
                    cfg.selection.eta = eta;
                    cfg.selection.b2 = b2;
                    cfg.noise.rate = rate;
                    cfg.set_method(method);
                    for &seed in &seeds {
                        let mut run = cfg.clone();
                        run.seed = seed;
                        run.output_dir = out_dir.map(|d| d.join(format!("cell_{id}")).join(format!("seed_{seed}")));
                        jobs.push(Job {
                            cell: id,
                            seed,
                            config: run,
                        });
                    }
                    cells.push(SweepCell {
                        cell_id: id,
                        eta,
                        b2,
                        noise_kind: base.noise.kind,
                        noise_rate: rate,
                        method,
                        finals: Vec::new(),
                        failures: Vec::new(),
                    });
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidState(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<f64>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                job.config.validate()?;
                run_experiment(&job.config)?
                    .final_mean_acc()
                    .ok_or_else(|| Error::InvalidState("run produced no epochs".into()))
            })
            .collect()
    });
    for (job, outcome) in jobs.iter().zip(outcomes) {
        let cell = &mut cells[job.cell];
        match outcome {
            Ok(acc) => cell.finals.push(acc),
            Err(e) => cell.failures.push((job.seed, e.to_string())),
        }
    }

    let summary = SweepSummary { cells };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        summary.write_csv(&dir.join("summary.csv"))?;
    }
    Ok(summary)
}
