//! Per-method summaries: median and IQR of the best value at fixed fractions
//! of the budget, plus a verifier that recomputes them from the traces.

use std::fs;
use std::path::{Path, PathBuf};

use lamcts::lamcts::EvalRecord;
use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{CliError, Result};
use crate::trace;

pub const CHECKPOINT_FRACTIONS: [f64; 4] = [0.10, 0.25, 0.50, 1.00];

/// Linear-interpolation quantile of `values` (sorted internally), `q` in
/// `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Number of evaluations that a budget fraction refers to.
pub fn checkpoint_evaluations(budget: usize, fraction: f64) -> usize {
    ((fraction * budget as f64).ceil() as usize).clamp(1, budget)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub fraction: f64,
    pub evaluations: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub objective: String,
    pub dim: usize,
    pub method: Method,
    pub budget: usize,
    pub seeds: Vec<u64>,
    pub checkpoints: Vec<Checkpoint>,
    /// Best value at the end of each repeat, in seed order.
    pub final_best: Vec<f64>,
    /// Evaluation traces, relative to the summary's directory.
    pub eval_traces: Vec<String>,
    /// Iteration traces, relative to the summary's directory.
    pub iteration_traces: Vec<String>,
}

impl Summary {
    /// Builds a summary from per-repeat evaluation rows (in seed order).
    #[allow(clippy::too_many_arguments)]
    pub fn from_runs(
        objective: &str,
        dim: usize,
        method: Method,
        budget: usize,
        seeds: Vec<u64>,
        runs: &[Vec<EvalRecord>],
        eval_traces: Vec<String>,
        iteration_traces: Vec<String>,
    ) -> Result<Self> {
        if runs.is_empty() {
            return Err(CliError::Usage("repeats: no runs to summarize".into()));
        }
        for (seed, rows) in seeds.iter().zip(runs) {
            if rows.len() != budget {
                return Err(CliError::Verify(format!(
                    "seed {seed}: {} evaluations recorded, budget is {budget}",
                    rows.len()
                )));
            }
        }
        let checkpoints = CHECKPOINT_FRACTIONS
            .iter()
            .map(|&fraction| {
                let evaluations = checkpoint_evaluations(budget, fraction);
                let at: Vec<f64> = runs.iter().map(|r| r[evaluations - 1].best_value).collect();
                let (q1, q3) = (quantile(&at, 0.25), quantile(&at, 0.75));
                Checkpoint {
                    fraction,
                    evaluations,
                    median: median(&at),
                    q1,
                    q3,
                    iqr: q3 - q1,
                }
            })
            .collect();
        Ok(Self {
            objective: objective.to_string(),
            dim,
            method,
            budget,
            seeds,
            checkpoints,
            final_best: runs.iter().map(|r| r[budget - 1].best_value).collect(),
            eval_traces,
            iteration_traces,
        })
    }

    pub fn final_median(&self) -> f64 {
        self.checkpoints.last().map_or(f64::NAN, |c| c.median)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("summary serializes") + "\n";
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}

fn check_running_best(path: &Path, rows: &[EvalRecord]) -> Result<()> {
    let mut best = f64::INFINITY;
    for (i, r) in rows.iter().enumerate() {
        if r.index != i {
            return Err(CliError::Verify(format!(
                "{}: row {} has index {}",
                path.display(),
                i + 1,
                r.index
            )));
        }
        best = best.min(r.value);
        if r.best_value != best {
            return Err(CliError::Verify(format!(
                "{}: row {} best_value {} but the running minimum is {best}",
                path.display(),
                i + 1,
                r.best_value
            )));
        }
    }
    Ok(())
}

/// Recomputes a summary from the trace files it lists and checks that every
/// stored number matches exactly.
pub fn verify(summary_path: &Path) -> Result<Summary> {
    let stored = Summary::load(summary_path)?;
    let dir = summary_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    if stored.eval_traces.len() != stored.seeds.len() {
        return Err(CliError::Verify(format!(
            "{} seeds but {} evaluation traces",
            stored.seeds.len(),
            stored.eval_traces.len()
        )));
    }
    let mut runs = Vec::new();
    for name in &stored.eval_traces {
        let path = dir.join(name);
        let rows = trace::read_evals(&path)?;
        check_running_best(&path, &rows)?;
        runs.push(rows);
    }
    for name in &stored.iteration_traces {
        trace::read_iterations(&dir.join(name))?;
    }
    let again = Summary::from_runs(
        &stored.objective,
        stored.dim,
        stored.method,
        stored.budget,
        stored.seeds.clone(),
        &runs,
        stored.eval_traces.clone(),
        stored.iteration_traces.clone(),
    )?;
    if again != stored {
        return Err(CliError::Verify(format!(
            "{}: stored statistics differ from the ones recomputed from the traces",
            summary_path.display()
        )));
    }
    Ok(stored)
}
