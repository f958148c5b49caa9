use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;

use super::config::Experiment;
use crate::canonical::Algorithm;
use crate::lle::TrainingSet;
use crate::numerics::mse;
use crate::{Error, Result, Vector};

pub const SWEEP_HEADER: &str = "algorithm,steps,strategy,mean_mse,mean_psnr,train_mse,status";

/// Environment variable capping worker threads.
pub const THREADS_VAR: &str = "LLE_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Strategy {
    Base,
    Lle,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Base => "base",
            Strategy::Lle => "lle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMetrics {
    /// Held-out mean MSE.
    pub mean_mse: f64,
    pub mean_psnr: f64,
    /// Mean MSE of the final estimates on the training set.
    pub train_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub algorithm: Algorithm,
    pub steps: usize,
    pub strategy: Strategy,
    pub outcome: std::result::Result<CellMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        for r in &self.rows {
            let _ = write!(out, "{},{},{},", r.algorithm, r.steps, r.strategy);
            let _ = match &r.outcome {
                Ok(m) => writeln!(out, "{:e},{:e},{:e},ok", m.mean_mse, m.mean_psnr, m.train_mse),
                Err(e) => writeln!(out, ",,,error: {}", e.replace([',', '\n', '\r'], " ")),
            };
        }
        out
    }

    pub fn get(&self, steps: usize, strategy: Strategy) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.steps == steps && r.strategy == strategy)
    }
}

/// Runs `f` on a pool capped by `LLE_THREADS` when it is set.
pub fn with_thread_limit<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(f());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn mean_mse(x: &[Vector], truth: &[Vector]) -> Result<f64> {
    let total = x
        .iter()
        .zip(truth)
        .map(|(a, b)| mse(a.as_slice(), b.as_slice()))
        .sum::<Result<f64>>()?;
    Ok(total / x.len() as f64)
}

fn base_cell(exp: &Experiment, train: &TrainingSet, test: &TrainingSet, steps: usize) -> Result<CellMetrics> {
    let seeds = exp.config.seeds;
    let recon = exp.reconstruct(&test.observations, steps, None, seeds.test)?;
    let eval = exp.evaluate_test(&recon, test)?;
    let train_est = exp.reconstruct(&train.observations, steps, None, seeds.train)?;
    Ok(CellMetrics {
        mean_mse: eval.mean_mse(),
        mean_psnr: eval.mean_psnr(),
        train_mse: mean_mse(&train_est, &train.truths)?,
    })
}

fn lle_cell(exp: &Experiment, train: &TrainingSet, test: &TrainingSet, steps: usize) -> Result<CellMetrics> {
    let (coeffs, train_est) = exp.coefficients(train, steps)?;
    let recon = exp.reconstruct(&test.observations, steps, Some(&coeffs), exp.config.seeds.test)?;
    let eval = exp.evaluate_test(&recon, test)?;
    Ok(CellMetrics {
        mean_mse: eval.mean_mse(),
        mean_psnr: eval.mean_psnr(),
        train_mse: mean_mse(&train_est, &train.truths)?,
    })
}

/// Base and LLE rows for every step count, on one training set and one
/// held-out set. Cells run in parallel; a failing cell is recorded and the
/// rest continue. Rows are sorted by step count, base first.
pub fn sweep(exp: &Experiment, steps_list: &[usize]) -> Result<SweepTable> {
    if steps_list.is_empty() {
        return Err(Error::Config("steps list is empty".into()));
    }
    let mut steps: Vec<usize> = steps_list.to_vec();
    steps.sort_unstable();
    steps.dedup();
    let train = exp.training_set()?;
    let test = exp.test_set()?;
    let cells: Vec<(usize, Strategy)> = steps
        .iter()
        .flat_map(|&s| [(s, Strategy::Base), (s, Strategy::Lle)])
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(s, strategy)| {
            let outcome = match strategy {
                Strategy::Base => base_cell(exp, &train, &test, s),
                Strategy::Lle => lle_cell(exp, &train, &test, s),
            };
            SweepRow {
                algorithm: exp.config.algorithm,
                steps: s,
                strategy,
                outcome: outcome.map_err(|e| e.to_string()),
            }
        })
        .collect();
    Ok(SweepTable { rows })
}
