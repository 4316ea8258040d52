//! The outer loop: build the partition tree, pick a region by UCB, sample it
//! with a local solver and fold the evaluations back in.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{evaluate, Bounds, Dataset, Evaluation, Objective};
use crate::error::{Error, Result};
use crate::gp::{GpFitConfig, GpModel, KernelParams};
use crate::partition::KernelChoice;
use crate::rng::SeedSource;
use crate::sampling::{
    optimize_acquisition_with, rejection_sample, AcquisitionConfig, TRIES_PER_POINT,
};
use crate::tree::{build_tree, NodeId, Region, TreeConfig};
use crate::turbo::{run_local, TrustRegionConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    #[default]
    Turbo,
    Bo,
    Random,
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampler::Turbo => "turbo",
            Sampler::Bo => "bo",
            Sampler::Random => "random",
        })
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "turbo" => Ok(Sampler::Turbo),
            "bo" => Ok(Sampler::Bo),
            "random" => Ok(Sampler::Random),
            _ => Err(Error::Config(format!(
                "unknown sampler '{s}' (valid: turbo, bo, random)"
            ))),
        }
    }
}

/// Settings for the GP + expected-improvement sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    /// Regions with fewer points are padded with the points nearest to the
    /// region's best point.
    pub min_region_points: usize,
    /// The GP conditions on at most this many points, highest reward first.
    pub max_gp_points: usize,
    pub gp_steps: usize,
    pub gp_warm_steps: usize,
    pub gp_restarts: usize,
    pub gp_max_fit_points: usize,
    pub acquisition: AcquisitionConfig,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            min_region_points: 5,
            max_gp_points: 200,
            gp_steps: 50,
            gp_warm_steps: 10,
            gp_restarts: 2,
            gp_max_fit_points: 100,
            acquisition: AcquisitionConfig::default(),
        }
    }
}

/// Optimizer settings.
///
/// `cp` scales exploration. A reasonable range is 1% to 10% of the largest
/// objective magnitude you expect; it is not set automatically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LamctsConfig {
    pub cp: f64,
    pub theta: usize,
    pub svm_kernel: KernelChoice,
    pub svm_c: f64,
    pub sampler: Sampler,
    pub n_init: usize,
    pub eval_budget: usize,
    /// Evaluations per iteration for the bo and random samplers.
    pub local_budget_per_iteration: usize,
    /// Most evaluations one trust-region run may use before the tree is
    /// rebuilt. `None` lets the run continue until its trust region collapses.
    pub turbo_iteration_cap: Option<usize>,
    pub seed: u64,
    pub turbo: TrustRegionConfig,
    pub bo: BoConfig,
}

impl Default for LamctsConfig {
    fn default() -> Self {
        Self {
            cp: 1.0,
            theta: 20,
            svm_kernel: KernelChoice::Rbf,
            svm_c: 1.0,
            sampler: Sampler::Turbo,
            n_init: 30,
            eval_budget: 1000,
            local_budget_per_iteration: 10,
            turbo_iteration_cap: None,
            seed: 0,
            turbo: TrustRegionConfig::default(),
            bo: BoConfig::default(),
        }
    }
}

impl LamctsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.theta < 2 {
            return Err(Error::Config(format!(
                "theta must be at least 2, got {}",
                self.theta
            )));
        }
        if !(self.cp >= 0.0 && self.cp.is_finite()) {
            return Err(Error::Config(format!(
                "cp must be a finite non-negative number, got {}",
                self.cp
            )));
        }
        if !(self.svm_c > 0.0 && self.svm_c.is_finite()) {
            return Err(Error::Config(format!(
                "svm_c must be positive, got {}",
                self.svm_c
            )));
        }
        if self.n_init == 0 {
            return Err(Error::Config("n_init must be positive".into()));
        }
        if self.eval_budget < self.n_init {
            return Err(Error::Config(format!(
                "eval_budget ({}) must be at least n_init ({})",
                self.eval_budget, self.n_init
            )));
        }
        if self.local_budget_per_iteration == 0 || self.turbo_iteration_cap == Some(0) {
            return Err(Error::Config(
                "per-iteration budgets must be positive".into(),
            ));
        }
        if self.bo.max_gp_points < 2 {
            return Err(Error::Config("bo.max_gp_points must be at least 2".into()));
        }
        self.turbo.validate()?;
        self.bo.acquisition.expansion.validate()
    }

    pub fn tree_config(&self) -> TreeConfig {
        TreeConfig {
            theta: self.theta,
            cp: self.cp,
            kernel: self.svm_kernel,
            svm_c: self.svm_c,
        }
    }
}

/// Which region an iteration actually sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionUsed {
    Selected,
    Sibling,
    Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: usize,
    pub value: f64,
    pub best_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub tree_depth: usize,
    pub num_splits: usize,
    /// Mean objective value (not reward) of the selected leaf.
    pub leaf_mean: f64,
    pub leaf_size: usize,
    pub path: Vec<NodeId>,
    pub region: RegionUsed,
    pub evaluations: usize,
    /// The trust-region run was stopped by the per-iteration cap.
    pub capped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub evaluations: Vec<EvalRecord>,
    pub iterations: Vec<IterationRecord>,
}

impl RunTrace {
    fn from_dataset(dataset: &Dataset, iterations: Vec<IterationRecord>) -> Self {
        let mode = dataset.mode();
        let mut best: Option<f64> = None;
        let evaluations = dataset
            .iter()
            .map(|e| {
                let b = match best {
                    Some(b) if !mode.improves(e.value, b) => b,
                    _ => e.value,
                };
                best = Some(b);
                EvalRecord {
                    index: e.index,
                    value: e.value,
                    best_value: b,
                }
            })
            .collect();
        Self {
            evaluations,
            iterations,
        }
    }

    pub fn final_best(&self) -> Option<f64> {
        self.evaluations.last().map(|r| r.best_value)
    }

    /// Best value after the first `n` evaluations.
    pub fn best_at(&self, n: usize) -> Option<f64> {
        n.checked_sub(1)
            .and_then(|i| self.evaluations.get(i))
            .map(|r| r.best_value)
    }
}

/// `(num_splits, |leaf_mean - v_star|)` for every iteration.
pub fn regret_trace(trace: &RunTrace, v_star: f64) -> Vec<(usize, f64)> {
    trace
        .iterations
        .iter()
        .map(|it| (it.num_splits, (it.leaf_mean - v_star).abs()))
        .collect()
}

fn best_of_dataset(dataset: &Dataset) -> Result<Evaluation> {
    dataset
        .best()
        .cloned()
        .ok_or_else(|| Error::State("no evaluations were made".into()))
}

fn uniform_init<R: Rng + ?Sized>(
    objective: &dyn Objective,
    dataset: &mut Dataset,
    n: usize,
    rng: &mut R,
) -> Result<()> {
    for _ in 0..n {
        let p = objective.bounds().sample_uniform(rng);
        evaluate(objective, p, dataset)?;
    }
    Ok(())
}

/// Runs the optimizer to `config.eval_budget` evaluations.
pub fn optimize(
    objective: &dyn Objective,
    config: &LamctsConfig,
) -> Result<(Evaluation, RunTrace)> {
    config.validate()?;
    let seeds = SeedSource::new(config.seed);
    let mut dataset = Dataset::for_objective(objective);
    uniform_init(
        objective,
        &mut dataset,
        config.n_init,
        &mut seeds.stream("init", 0),
    )?;

    let tree_cfg = config.tree_config();
    let mode = dataset.mode();
    let mut iterations = Vec::new();
    while dataset.len() < config.eval_budget {
        let iteration = iterations.len();
        let remaining = config.eval_budget - dataset.len();
        let mut rng = seeds.stream("iteration", iteration as u64);
        let tree = build_tree(&dataset, tree_cfg)?;
        let selection = tree.select_path();
        let leaf = tree.node(selection.leaf).expect("selected leaf exists");

        let mut attempts = vec![(RegionUsed::Selected, selection.region.clone())];
        if let Some(sib) = tree.sibling(selection.leaf) {
            attempts.push((RegionUsed::Sibling, tree.region_of(sib)));
        }
        attempts.push((
            RegionUsed::Bounds,
            Region::unconstrained(dataset.bounds().clone()),
        ));

        let mut outcome = None;
        for (used, region) in attempts {
            match sample_region(
                objective,
                &mut dataset,
                &region,
                remaining,
                config,
                &mut rng,
            ) {
                Ok(n) => {
                    outcome = Some((used, n));
                    break;
                }
                Err(Error::Infeasible { .. }) => continue,
                Err(e) => return Err(e),
            }
        }
        let (region, evaluations) = outcome.ok_or_else(|| {
            Error::infeasible(
                "no region, including the plain bounds, could be sampled",
                Vec::new(),
            )
        })?;
        iterations.push(IterationRecord {
            iteration,
            tree_depth: tree.depth(),
            num_splits: tree.num_splits(),
            leaf_mean: mode.value(leaf.mean()),
            leaf_size: leaf.n,
            path: selection.path,
            region,
            evaluations,
            capped: config.sampler == Sampler::Turbo
                && config
                    .turbo_iteration_cap
                    .is_some_and(|cap| evaluations >= cap),
        });
    }
    let trace = RunTrace::from_dataset(&dataset, iterations);
    Ok((best_of_dataset(&dataset)?, trace))
}

/// Spends part of the remaining budget inside `region`. Returns the number
/// of evaluations made; fails with `Infeasible` only if none were made.
fn sample_region<R: Rng + ?Sized>(
    objective: &dyn Objective,
    dataset: &mut Dataset,
    region: &Region,
    remaining: usize,
    config: &LamctsConfig,
    rng: &mut R,
) -> Result<usize> {
    match config.sampler {
        Sampler::Turbo => {
            let budget = config
                .turbo_iteration_cap
                .map_or(remaining, |cap| remaining.min(cap));
            Ok(run_local(region, objective, dataset, budget, &config.turbo, rng)?.len())
        }
        Sampler::Bo => {
            let budget = remaining.min(config.local_budget_per_iteration);
            let mut warm = None;
            let points: Vec<&[f64]> = dataset.iter().map(|e| e.point.as_slice()).collect();
            let mut membership = region.contains_many(&points);
            for step in 0..budget {
                match bo_step(
                    objective,
                    dataset,
                    region,
                    &mut membership,
                    &config.bo,
                    &mut warm,
                    rng,
                ) {
                    Ok(()) => {}
                    Err(Error::Infeasible { .. }) if step > 0 => return Ok(step),
                    Err(e) => return Err(e),
                }
            }
            Ok(budget)
        }
        Sampler::Random => {
            let n = remaining.min(config.local_budget_per_iteration);
            let points = match rejection_sample(region, n, TRIES_PER_POINT * n, rng) {
                Ok(p) => p,
                Err(Error::Infeasible { accepted, .. }) if !accepted.is_empty() => accepted,
                Err(e) => return Err(e),
            };
            let k = points.len();
            for p in points {
                evaluate(objective, p, dataset)?;
            }
            Ok(k)
        }
    }
}

/// Training set for the region GP: the in-region points, padded up to
/// `min_region_points` with the points closest to the region's best point,
/// then trimmed to the `max_gp_points` highest rewards.
fn region_training_set(dataset: &Dataset, membership: &[bool], cfg: &BoConfig) -> Vec<usize> {
    let mut inside: Vec<usize> = (0..dataset.len()).filter(|&i| membership[i]).collect();
    if inside.len() < cfg.min_region_points {
        let evals = dataset.evals();
        let reference = inside
            .iter()
            .map(|&i| &evals[i])
            .max_by(|a, b| a.reward.total_cmp(&b.reward).then(b.index.cmp(&a.index)))
            .or_else(|| dataset.best())
            .map(|e| dataset.bounds().to_unit(&e.point));
        if let Some(reference) = reference {
            let b = dataset.bounds();
            let mut others: Vec<(f64, usize)> = (0..evals.len())
                .filter(|i| !inside.contains(i))
                .map(|i| {
                    let u = b.to_unit(&evals[i].point);
                    let d2: f64 = u
                        .iter()
                        .zip(&reference)
                        .map(|(a, c)| (a - c) * (a - c))
                        .sum();
                    (d2, i)
                })
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let need = cfg.min_region_points - inside.len();
            inside.extend(others.into_iter().take(need).map(|(_, i)| i));
        }
    }
    if inside.len() > cfg.max_gp_points {
        let evals = dataset.evals();
        inside.sort_by(|&a, &b| evals[b].reward.total_cmp(&evals[a].reward).then(a.cmp(&b)));
        inside.truncate(cfg.max_gp_points);
    }
    inside.sort_unstable();
    inside
}

fn bo_step<R: Rng + ?Sized>(
    objective: &dyn Objective,
    dataset: &mut Dataset,
    region: &Region,
    membership: &mut Vec<bool>,
    cfg: &BoConfig,
    warm: &mut Option<KernelParams>,
    rng: &mut R,
) -> Result<()> {
    let ids = region_training_set(dataset, membership, cfg);
    let model = fit_on(dataset, &ids, dataset.bounds(), cfg, warm.clone(), rng)?;
    *warm = Some(model.params().clone());
    let p = optimize_acquisition_with(&model, region, dataset, membership, &cfg.acquisition, rng)?;
    membership.push(region.contains(&p));
    evaluate(objective, p, dataset)?;
    Ok(())
}

fn fit_on<R: Rng + ?Sized>(
    dataset: &Dataset,
    ids: &[usize],
    bounds: &Bounds,
    cfg: &BoConfig,
    warm: Option<KernelParams>,
    rng: &mut R,
) -> Result<GpModel> {
    let evals = dataset.evals();
    let x: Vec<&[f64]> = ids.iter().map(|&i| evals[i].point.as_slice()).collect();
    let y: Vec<f64> = ids.iter().map(|&i| evals[i].reward).collect();
    let fit = GpFitConfig {
        steps: if warm.is_some() {
            cfg.gp_warm_steps
        } else {
            cfg.gp_steps
        },
        restarts: if warm.is_some() { 1 } else { cfg.gp_restarts },
        max_fit_points: cfg.gp_max_fit_points,
        warm_start: warm,
    };
    GpModel::fit(&x, &y, bounds, &fit, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Random,
    PlainTurbo,
    PlainBo,
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Baseline::Random => "random",
            Baseline::PlainTurbo => "plain_turbo",
            Baseline::PlainBo => "plain_bo",
        })
    }
}

/// Runs a baseline with default settings.
pub fn run_baseline(
    objective: &dyn Objective,
    which: Baseline,
    budget: usize,
    seed: u64,
) -> Result<(Evaluation, RunTrace)> {
    let config = LamctsConfig {
        eval_budget: budget,
        seed,
        ..Default::default()
    };
    run_baseline_with(objective, which, &config)
}

/// Runs a baseline using the budget, seed, initial design size and
/// sub-solver settings of `config`. Tree settings are ignored.
pub fn run_baseline_with(
    objective: &dyn Objective,
    which: Baseline,
    config: &LamctsConfig,
) -> Result<(Evaluation, RunTrace)> {
    let budget = config.eval_budget;
    if budget == 0 {
        return Err(Error::Config("eval_budget must be positive".into()));
    }
    let seeds = SeedSource::new(config.seed);
    let mut dataset = Dataset::for_objective(objective);
    let region = Region::unconstrained(objective.bounds().clone());
    match which {
        Baseline::Random => uniform_init(
            objective,
            &mut dataset,
            budget,
            &mut seeds.stream("init", 0),
        )?,
        Baseline::PlainTurbo => {
            config.turbo.validate()?;
            let mut restart = 0u64;
            while dataset.len() < budget {
                let mut rng = seeds.stream("restart", restart);
                let left = budget - dataset.len();
                run_local(
                    &region,
                    objective,
                    &mut dataset,
                    left,
                    &config.turbo,
                    &mut rng,
                )?;
                restart += 1;
            }
        }
        Baseline::PlainBo => {
            let n_init = config.n_init.min(budget);
            uniform_init(
                objective,
                &mut dataset,
                n_init,
                &mut seeds.stream("init", 0),
            )?;
            let mut warm = None;
            let mut step = 0u64;
            let mut membership = vec![true; dataset.len()];
            while dataset.len() < budget {
                let mut rng = seeds.stream("step", step);
                bo_step(
                    objective,
                    &mut dataset,
                    &region,
                    &mut membership,
                    &config.bo,
                    &mut warm,
                    &mut rng,
                )?;
                step += 1;
            }
        }
    }
    let trace = RunTrace::from_dataset(&dataset, Vec::new());
    Ok((best_of_dataset(&dataset)?, trace))
}
