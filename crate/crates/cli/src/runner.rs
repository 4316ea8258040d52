//! Runs every repeat of an experiment and writes traces, config and summary.

use std::fs;
use std::path::{Path, PathBuf};

use lamcts::lamcts::{optimize, run_baseline_with, Baseline, RunTrace};
use lamcts::Objective;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Method};
use crate::error::{CliError, Result};
use crate::summary::Summary;
use crate::trace;

pub const THREADS_VAR: &str = "LAMCTS_THREADS";

/// Worker count from `LAMCTS_THREADS`; `None` when unset.
pub fn thread_limit() -> Result<Option<usize>> {
    match std::env::var(THREADS_VAR) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(CliError::Usage(format!("{THREADS_VAR}: {e}"))),
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!(
                "{THREADS_VAR}: expected a positive integer, got '{raw}'"
            ))),
        },
    }
}

/// Runs one repeat of `method`.
pub fn run_one(cfg: &ExperimentConfig, objective: &dyn Objective, seed: u64) -> Result<RunTrace> {
    let opt = cfg.optimizer_for(seed);
    let (_, trace) = match cfg.method {
        Method::LamctsTurbo | Method::LamctsBo => optimize(objective, &opt)?,
        Method::Turbo => run_baseline_with(objective, Baseline::PlainTurbo, &opt)?,
        Method::Bo => run_baseline_with(objective, Baseline::PlainBo, &opt)?,
        Method::Random => run_baseline_with(objective, Baseline::Random, &opt)?,
    };
    Ok(trace)
}

pub fn file_prefix(cfg: &ExperimentConfig) -> String {
    format!("{}-d{}-{}", cfg.objective, cfg.dim, cfg.method)
}

/// Paths written by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary_path: PathBuf,
    pub config_path: PathBuf,
    pub summary: Summary,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let objective = cfg.benchmark()?;
    let seeds = cfg.seeds();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit()? {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("{THREADS_VAR}: {e}")))?;
    let traces: Vec<RunTrace> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| run_one(cfg, &objective, seed))
            .collect::<Result<_>>()
    })?;

    write_outputs(cfg, &cfg.out, &seeds, &traces)
}

fn write_outputs(
    cfg: &ExperimentConfig,
    dir: &Path,
    seeds: &[u64],
    traces: &[RunTrace],
) -> Result<RunOutput> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let prefix = file_prefix(cfg);
    let mut eval_names = Vec::new();
    let mut iter_names = Vec::new();
    for (&seed, t) in seeds.iter().zip(traces) {
        trace::write_trace(dir, &prefix, seed, t)?;
        let (e, i) = trace::trace_names(&prefix, seed);
        eval_names.push(e);
        iter_names.push(i);
    }
    let runs: Vec<_> = traces.iter().map(|t| t.evaluations.clone()).collect();
    let summary = Summary::from_runs(
        &cfg.objective,
        cfg.dim,
        cfg.method,
        cfg.budget(),
        seeds.to_vec(),
        &runs,
        eval_names,
        iter_names,
    )?;

    let config_path = dir.join(format!("{prefix}.config.json"));
    fs::write(&config_path, cfg.to_json() + "\n").map_err(|e| CliError::io(&config_path, e))?;
    let summary_path = dir.join(format!("{prefix}.summary.json"));
    summary.save(&summary_path)?;
    Ok(RunOutput {
        summary_path,
        config_path,
        summary,
    })
}
