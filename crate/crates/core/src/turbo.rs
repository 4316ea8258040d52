//! Trust-region Bayesian optimization confined to a learned region.
//!
//! A single trust region (TuRBO-1 style) whose initial design, center and
//! candidates all live inside the region handed down by the tree.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{best_of, evaluate, Bounds, Dataset, Evaluation, Objective, Point};
use crate::error::{Error, Result};
use crate::gp::{expected_improvement, GpFitConfig, GpModel};
use crate::sampling::{rejection_sample, Sobol, TRIES_PER_POINT};
use crate::tree::Region;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acquisition {
    #[default]
    Thompson,
    Ei,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrustRegionConfig {
    pub length_init: f64,
    pub length_min: f64,
    pub length_max: f64,
    pub success_tolerance: usize,
    /// `None` means `max(5, min(d, 30))`.
    pub failure_tolerance: Option<usize>,
    pub n_init: usize,
    /// `None` means `min(100 d, 2000)`.
    pub candidates: Option<usize>,
    /// The local GP sees at most this many of the most recent local points.
    pub max_local_points: usize,
    pub acquisition: Acquisition,
    /// Random Fourier features per Thompson draw.
    pub thompson_features: usize,
    /// Gradient steps for a cold hyperparameter fit.
    pub gp_steps: usize,
    /// Gradient steps when refitting from the previous step's hyperparameters.
    pub gp_warm_steps: usize,
    pub gp_restarts: usize,
    pub gp_max_fit_points: usize,
}

impl Default for TrustRegionConfig {
    fn default() -> Self {
        Self {
            length_init: 0.8,
            length_min: 0.5f64.powi(7),
            length_max: 1.6,
            success_tolerance: 3,
            failure_tolerance: None,
            n_init: 30,
            candidates: None,
            max_local_points: 500,
            acquisition: Acquisition::Thompson,
            thompson_features: 256,
            gp_steps: 50,
            gp_warm_steps: 10,
            gp_restarts: 2,
            gp_max_fit_points: 100,
        }
    }
}

impl TrustRegionConfig {
    pub fn failure_tolerance_for(&self, dim: usize) -> usize {
        self.failure_tolerance.unwrap_or(dim.clamp(5, 30))
    }

    pub fn candidates_for(&self, dim: usize) -> usize {
        self.candidates.unwrap_or((100 * dim).min(2000))
    }

    pub fn perturb_probability(dim: usize) -> f64 {
        (20.0 / dim as f64).min(1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.length_min > 0.0
            && self.length_min <= self.length_init
            && self.length_init <= self.length_max
            && self.success_tolerance > 0
            && self.failure_tolerance != Some(0)
            && self.n_init > 0
            && self.candidates != Some(0)
            && self.max_local_points >= 2
            && self.thompson_features > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid trust-region settings: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrustRegionState {
    pub length: f64,
    pub success_count: usize,
    pub failure_count: usize,
    pub local_data: Vec<Evaluation>,
    pub center: Point,
    pub config: TrustRegionConfig,
    dim: usize,
    sobol: Sobol,
}

impl TrustRegionState {
    pub fn new(
        local_data: Vec<Evaluation>,
        config: TrustRegionConfig,
        sobol_skip: u64,
    ) -> Result<Self> {
        let center = best_of(&local_data)
            .ok_or_else(|| Error::State("a trust region needs at least one point".into()))?
            .point
            .clone();
        let dim = center.dim();
        let mut sobol = Sobol::new(dim)?;
        sobol.skip(sobol_skip);
        Ok(Self {
            length: config.length_init,
            success_count: 0,
            failure_count: 0,
            local_data,
            center,
            config,
            dim,
            sobol,
        })
    }

    pub fn is_active(&self) -> bool {
        self.length >= self.config.length_min
    }

    pub fn best_reward(&self) -> f64 {
        best_of(&self.local_data).map_or(f64::NEG_INFINITY, |e| e.reward)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Evaluates an initial design drawn inside `region` and opens a trust
/// region around its best point.
pub fn tr_init<R: Rng + ?Sized>(
    region: &Region,
    objective: &dyn Objective,
    dataset: &mut Dataset,
    n_init: usize,
    config: &TrustRegionConfig,
    rng: &mut R,
) -> Result<TrustRegionState> {
    let points = initial_design(region, dataset, n_init, rng)?;
    let mut local = Vec::with_capacity(points.len());
    for p in points {
        local.push(evaluate(objective, p, dataset)?);
    }
    TrustRegionState::new(local, config.clone(), rng.random_range(0..1u64 << 16))
}

/// Rejection samples, topped up by jittering known in-region points when the
/// region is too small to hit by chance.
fn initial_design<R: Rng + ?Sized>(
    region: &Region,
    dataset: &Dataset,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Point>> {
    let mut points = match rejection_sample(region, n, TRIES_PER_POINT * n, rng) {
        Ok(p) => return Ok(p),
        Err(Error::Infeasible { accepted, .. }) => accepted,
        Err(e) => return Err(e),
    };
    let seeds: Vec<Point> = dataset
        .iter()
        .map(|e| e.point.clone())
        .filter(|p| region.contains(p))
        .chain(points.iter().cloned())
        .collect();
    if !seeds.is_empty() {
        let b = &region.bounds;
        let sd: Vec<f64> = (0..b.dim()).map(|i| 1e-3 * b.width(i)).collect();
        let mut tries = 0;
        while points.len() < n && tries < TRIES_PER_POINT * n {
            tries += 1;
            let base = &seeds[rng.random_range(0..seeds.len())];
            let mut x: Vec<f64> = base
                .iter()
                .zip(&sd)
                .map(|(v, s)| v + s * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            b.clip(&mut x);
            if region.contains(&x) {
                points.push(Point::from_vec_unchecked(x));
            }
        }
    }
    if points.is_empty() {
        return Err(Error::infeasible(
            "no initial point found inside the region",
            points,
        ));
    }
    Ok(points)
}

/// Trust-region box in original coordinates. Side lengths are
/// `L * l_i / geomean(l)` in unit-cube coordinates, clipped to the bounds.
pub fn tr_box(state: &TrustRegionState, model: &GpModel) -> Bounds {
    let bounds = model.bounds();
    let ls = &model.params().lengthscales;
    let geo = (ls.iter().map(|l| l.ln()).sum::<f64>() / ls.len() as f64).exp();
    let c = bounds.to_unit(&state.center);
    let mut lo = Vec::with_capacity(c.len());
    let mut hi = Vec::with_capacity(c.len());
    for (ci, l) in c.iter().zip(ls) {
        let half = 0.5 * state.length * l / geo;
        lo.push((ci - half).max(0.0));
        hi.push((ci + half).min(1.0));
    }
    let lower = bounds.from_unit(&lo);
    let upper = bounds.from_unit(&hi);
    Bounds::new(lower, upper).expect("trust-region box has positive width")
}

/// Proposes the next point: Sobol candidates in the trust-region box with a
/// coordinate-perturbation mask, restricted to `region`, scored by the
/// configured acquisition.
pub fn tr_propose<R: Rng + ?Sized>(
    state: &mut TrustRegionState,
    model: &GpModel,
    region: &Region,
    rng: &mut R,
) -> Point {
    let d = state.dim;
    let tr = tr_box(state, model);
    let n = state.config.candidates_for(d);
    let prob = TrustRegionConfig::perturb_probability(d);
    // Every candidate lies within `reach` of the center, so constraints that
    // are stable on that ball need no evaluation.
    let balls = region.stable_balls(&state.center);
    let reach = (0..d)
        .map(|i| {
            (state.center[i] - tr.lower()[i])
                .max(tr.upper()[i] - state.center[i])
                .powi(2)
        })
        .sum::<f64>()
        .sqrt();
    let mut candidates = Vec::new();
    for _ in 0..10 {
        let raw: Vec<Vec<f64>> = state
            .sobol
            .next_n(n)
            .into_iter()
            .map(|u| {
                let mut mask: Vec<bool> = (0..d).map(|_| rng.random::<f64>() < prob).collect();
                if !mask.iter().any(|m| *m) {
                    mask[rng.random_range(0..d)] = true;
                }
                (0..d)
                    .map(|i| {
                        if mask[i] {
                            tr.lower()[i] + u[i] * tr.width(i)
                        } else {
                            state.center[i]
                        }
                    })
                    .collect()
            })
            .collect();
        let keep = region.contains_many_near(&raw, &balls, reach);
        candidates.extend(
            raw.into_iter()
                .zip(keep)
                .filter(|(_, k)| *k)
                .map(|(x, _)| Point::from_vec_unchecked(x)),
        );
        if !candidates.is_empty() {
            break;
        }
    }
    if candidates.is_empty() {
        return state.center.clone();
    }
    let scores = match state.config.acquisition {
        Acquisition::Thompson => {
            model.sample_posterior(&candidates, state.config.thompson_features, rng)
        }
        Acquisition::Ei => {
            let best = state.best_reward();
            let (m, v) = model.predict_many(&candidates);
            m.iter()
                .zip(&v)
                .map(|(m, v)| expected_improvement(*m, *v, best))
                .collect()
        }
    };
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    candidates.swap_remove(best)
}

/// Records a new local evaluation and applies the expand/shrink rules.
pub fn tr_update(state: &mut TrustRegionState, new_eval: Evaluation) {
    let dim = state.dim;
    let cfg = &state.config;
    if new_eval.reward > state.best_reward() {
        state.success_count += 1;
        state.failure_count = 0;
    } else {
        state.success_count = 0;
        state.failure_count += 1;
    }
    if state.success_count == cfg.success_tolerance {
        state.length = (2.0 * state.length).min(cfg.length_max);
        state.success_count = 0;
    } else if state.failure_count == cfg.failure_tolerance_for(dim) {
        state.length /= 2.0;
        state.failure_count = 0;
    }
    state.local_data.push(new_eval);
    state.center = best_of(&state.local_data)
        .expect("local data is non-empty")
        .point
        .clone();
}

fn fit_local<R: Rng + ?Sized>(
    state: &TrustRegionState,
    bounds: &Bounds,
    warm: Option<&GpModel>,
    rng: &mut R,
) -> Result<GpModel> {
    let cfg = &state.config;
    let start = state.local_data.len().saturating_sub(cfg.max_local_points);
    let recent = &state.local_data[start..];
    let x: Vec<&[f64]> = recent.iter().map(|e| e.point.as_slice()).collect();
    let y: Vec<f64> = recent.iter().map(|e| e.reward).collect();
    let fit = GpFitConfig {
        steps: if warm.is_some() {
            cfg.gp_warm_steps
        } else {
            cfg.gp_steps
        },
        restarts: if warm.is_some() { 1 } else { cfg.gp_restarts },
        max_fit_points: cfg.gp_max_fit_points,
        warm_start: warm.map(|m| m.params().clone()),
    };
    GpModel::fit(&x, &y, bounds, &fit, rng)
}

/// One trust-region run inside `region`, until the region collapses or
/// `eval_budget` evaluations have been spent. Every evaluation is appended
/// to `dataset` and returned.
pub fn run_local<R: Rng + ?Sized>(
    region: &Region,
    objective: &dyn Objective,
    dataset: &mut Dataset,
    eval_budget: usize,
    config: &TrustRegionConfig,
    rng: &mut R,
) -> Result<Vec<Evaluation>> {
    if eval_budget == 0 {
        return Err(Error::Config(
            "local evaluation budget must be at least 1".into(),
        ));
    }
    config.validate()?;
    let mut state = tr_init(
        region,
        objective,
        dataset,
        config.n_init.min(eval_budget),
        config,
        rng,
    )?;
    let mut spent = state.local_data.len();
    let mut model: Option<GpModel> = None;
    while spent < eval_budget && state.is_active() {
        let fitted = match fit_local(&state, &region.bounds, model.as_ref(), rng) {
            Ok(m) => m,
            Err(Error::State(_)) => {
                // Fewer than two local points: fall back to one more design point.
                let p = initial_design(region, dataset, 1, rng)?.swap_remove(0);
                let e = evaluate(objective, p, dataset)?;
                tr_update(&mut state, e);
                spent += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let p = tr_propose(&mut state, &fitted, region, rng);
        let e = evaluate(objective, p, dataset)?;
        tr_update(&mut state, e);
        spent += 1;
        model = Some(fitted);
    }
    Ok(state.local_data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Mode;
    use crate::gp::KernelParams;
    use crate::partition::{LatentAction, Side, Sign, SvmModel};
    use crate::rng::SeedSource;
    use std::sync::Arc;

    struct Quadratic(Bounds);

    impl Objective for Quadratic {
        fn name(&self) -> &str {
            "quadratic"
        }
        fn bounds(&self) -> &Bounds {
            &self.0
        }
        fn mode(&self) -> Mode {
            Mode::Maximize
        }
        fn value(&self, x: &[f64]) -> f64 {
            -x.iter().map(|v| (v - 0.3) * (v - 0.3)).sum::<f64>()
        }
    }

    fn half_space(dim: usize, lo: f64, hi: f64) -> Region {
        let mut w = vec![0.0; dim];
        w[0] = 1.0;
        Region {
            constraints: vec![(
                Arc::new(LatentAction {
                    model: SvmModel::linear(w, -0.5 * (lo + hi)),
                    good_side: Sign::Positive,
                }),
                Side::Good,
            )],
            bounds: Bounds::uniform(dim, lo, hi).unwrap(),
        }
    }

    fn eval(index: usize, x: Vec<f64>, reward: f64) -> Evaluation {
        Evaluation {
            point: Point::new(x).unwrap(),
            value: -reward,
            reward,
            index,
        }
    }

    fn state_with(length: f64, dim: usize) -> TrustRegionState {
        let mut s = TrustRegionState::new(
            vec![eval(0, vec![0.5; dim], 0.0)],
            TrustRegionConfig::default(),
            0,
        )
        .unwrap();
        s.length = length;
        s
    }

    fn model_with(lengthscales: Vec<f64>) -> GpModel {
        let d = lengthscales.len();
        let b = Bounds::uniform(d, 0.0, 1.0).unwrap();
        let x = vec![vec![0.2; d], vec![0.7; d]];
        GpModel::with_params(
            &x,
            &[0.0, 1.0],
            &b,
            KernelParams::new(lengthscales, 1.0, 1e-4),
        )
        .unwrap()
    }

    #[test]
    fn default_settings() {
        let c = TrustRegionConfig::default();
        assert_eq!(c.length_min, 1.0 / 128.0);
        assert_eq!(c.n_init, 30);
        assert_eq!(c.failure_tolerance_for(2), 5);
        assert_eq!(c.failure_tolerance_for(20), 20);
        assert_eq!(c.failure_tolerance_for(100), 30);
        assert_eq!(c.candidates_for(20), 2000);
        assert_eq!(c.candidates_for(3), 300);
        assert_eq!(TrustRegionConfig::perturb_probability(40), 0.5);
        assert_eq!(TrustRegionConfig::perturb_probability(5), 1.0);
    }

    #[test]
    fn box_sides_follow_lengthscales() {
        let mut s = state_with(0.8, 2);
        s.center = Point::new(vec![0.5, 0.5]).unwrap();
        let b = tr_box(&s, &model_with(vec![1.0, 4.0]));
        assert!((b.width(0) - 0.4).abs() < 1e-12);
        // 1.6 is clipped to the unit interval.
        assert!((b.width(1) - 1.0).abs() < 1e-12);

        let iso = tr_box(&s, &model_with(vec![0.3, 0.3]));
        assert!((iso.width(0) - 0.8).abs() < 1e-12 && (iso.width(1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn box_clipped_at_corner() {
        let mut s = state_with(0.8, 2);
        s.center = Point::new(vec![0.0, 1.0]).unwrap();
        let b = tr_box(&s, &model_with(vec![0.3, 0.3]));
        assert_eq!(b.lower(), &[0.0, 0.6]);
        assert!((b.upper()[0] - 0.4).abs() < 1e-12);
        assert_eq!(b.upper()[1], 1.0);
    }

    #[test]
    fn three_successes_double_length() {
        let mut s = state_with(0.8, 2);
        for i in 1..=3 {
            tr_update(&mut s, eval(i, vec![0.5, 0.5], i as f64));
        }
        assert_eq!(s.length, 1.6);
        assert_eq!(s.success_count, 0);
        // Capped at the maximum.
        for i in 4..=6 {
            tr_update(&mut s, eval(i, vec![0.5, 0.5], i as f64));
        }
        assert_eq!(s.length, 1.6);
    }

    #[test]
    fn failures_shrink_until_inactive() {
        let mut s = state_with(0.5f64.powi(6), 2);
        let tau = s.config.failure_tolerance_for(2);
        for i in 0..tau {
            tr_update(&mut s, eval(i + 1, vec![0.1, 0.1], -1.0));
        }
        assert_eq!(s.length, 0.5f64.powi(7));
        assert!(s.is_active());
        for i in 0..tau {
            tr_update(&mut s, eval(i + 10, vec![0.1, 0.1], -1.0));
        }
        assert!(!s.is_active());
    }

    #[test]
    fn failure_resets_success_streak() {
        let mut s = state_with(0.8, 2);
        tr_update(&mut s, eval(1, vec![0.5, 0.5], 1.0));
        tr_update(&mut s, eval(2, vec![0.5, 0.5], 0.5));
        assert_eq!((s.success_count, s.failure_count), (0, 1));
        assert_eq!(s.center.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn unconstrained_init_is_uniform_in_bounds() {
        let obj = Quadratic(Bounds::uniform(2, 0.0, 1.0).unwrap());
        let mut ds = Dataset::for_objective(&obj);
        let region = Region::unconstrained(obj.0.clone());
        let mut rng = SeedSource::new(1).stream("tr", 0);
        let s = tr_init(
            &region,
            &obj,
            &mut ds,
            30,
            &TrustRegionConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(s.local_data.len(), 30);
        assert_eq!(ds.len(), 30);
        assert_eq!(s.length, 0.8);
        assert_eq!(s.center, ds.best().unwrap().point);
    }

    #[test]
    fn impossible_region_is_infeasible() {
        let obj = Quadratic(Bounds::uniform(2, 0.0, 1.0).unwrap());
        let mut ds = Dataset::for_objective(&obj);
        let mut region = half_space(2, 0.0, 1.0);
        region.constraints[0].0 = Arc::new(LatentAction {
            model: SvmModel::linear(vec![0.0, 0.0], -1.0),
            good_side: Sign::Positive,
        });
        let mut rng = SeedSource::new(1).stream("tr", 0);
        let r = tr_init(
            &region,
            &obj,
            &mut ds,
            5,
            &TrustRegionConfig::default(),
            &mut rng,
        );
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn budget_below_init_returns_budget_points() {
        let obj = Quadratic(Bounds::uniform(3, 0.0, 1.0).unwrap());
        let mut ds = Dataset::for_objective(&obj);
        let region = Region::unconstrained(obj.0.clone());
        let mut rng = SeedSource::new(2).stream("tr", 0);
        let evals = run_local(
            &region,
            &obj,
            &mut ds,
            7,
            &TrustRegionConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_eq!(evals.len(), 7);
        assert_eq!(ds.len(), 7);
    }

    #[test]
    fn single_candidate_is_returned() {
        let obj = Quadratic(Bounds::uniform(2, 0.0, 1.0).unwrap());
        let mut ds = Dataset::for_objective(&obj);
        let region = Region::unconstrained(obj.0.clone());
        let cfg = TrustRegionConfig {
            candidates: Some(1),
            ..Default::default()
        };
        let mut rng = SeedSource::new(3).stream("tr", 0);
        let mut s = tr_init(&region, &obj, &mut ds, 5, &cfg, &mut rng).unwrap();
        let model = model_with(vec![0.3, 0.3]);
        let mut replay = s.clone();
        let p = tr_propose(&mut s, &model, &region, &mut rng);
        let u = replay.sobol.next_point();
        let tr = tr_box(&replay, &model);
        for i in 0..2 {
            let perturbed = tr.lower()[i] + u[i] * tr.width(i);
            assert!(p[i] == perturbed || p[i] == replay.center[i]);
        }
    }

    #[test]
    fn proposals_stay_in_box_and_region() {
        let region = half_space(3, 0.0, 1.0);
        let obj = Quadratic(region.bounds.clone());
        let model = model_with(vec![0.2, 0.5, 1.0]);
        for trial in 0..1000u64 {
            let mut rng = SeedSource::new(trial).stream("tr", 0);
            let center = vec![
                rng.random_range(0.5..1.0),
                rng.random::<f64>(),
                rng.random::<f64>(),
            ];
            let mut ds = Dataset::for_objective(&obj);
            let e = evaluate(&obj, Point::new(center).unwrap(), &mut ds).unwrap();
            let cfg = TrustRegionConfig {
                candidates: Some(20),
                thompson_features: 32,
                ..Default::default()
            };
            let mut s = TrustRegionState::new(vec![e], cfg, trial).unwrap();
            s.length = rng.random_range(0.01..1.6);
            let tr = tr_box(&s, &model);
            let p = tr_propose(&mut s, &model, &region, &mut rng);
            assert!(region.contains(&p), "trial {trial}");
            assert!(tr.contains(&p), "trial {trial}");
        }
    }

    #[test]
    fn local_run_stays_in_region() {
        let region = half_space(2, 0.0, 1.0);
        let obj = Quadratic(region.bounds.clone());
        let mut ds = Dataset::for_objective(&obj);
        let cfg = TrustRegionConfig {
            n_init: 10,
            ..Default::default()
        };
        let mut rng = SeedSource::new(4).stream("tr", 0);
        let evals = run_local(&region, &obj, &mut ds, 40, &cfg, &mut rng).unwrap();
        assert_eq!(evals.len(), 40);
        assert!(evals.iter().all(|e| region.contains(&e.point)));
    }

    #[test]
    fn finds_one_d_quadratic_optimum() {
        let obj = Quadratic(Bounds::uniform(1, 0.0, 1.0).unwrap());
        let region = Region::unconstrained(obj.0.clone());
        let mut errors: Vec<f64> = (0..10u64)
            .map(|seed| {
                let mut ds = Dataset::for_objective(&obj);
                let mut rng = SeedSource::new(seed).stream("tr", 0);
                let mut spent = 0;
                while spent < 100 {
                    spent += run_local(
                        &region,
                        &obj,
                        &mut ds,
                        100 - spent,
                        &TrustRegionConfig::default(),
                        &mut rng,
                    )
                    .unwrap()
                    .len();
                }
                (ds.best().unwrap().point[0] - 0.3).abs()
            })
            .collect();
        errors.sort_by(f64::total_cmp);
        let median = 0.5 * (errors[4] + errors[5]);
        assert!(median < 0.05, "{median}");
    }
}
