//! Samplers that respect learned regions: uniform rejection sampling and the
//! rectangle-expansion heuristic used to optimize acquisition functions
//! inside a region.

pub mod sobol;
mod sobol_table;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use sobol::{sobol_next, Sobol, MAX_SOBOL_DIM};

use crate::domain::{Dataset, Point};
use crate::error::{Error, Result};
use crate::gp::{expected_improvement, GpModel};
use crate::tree::Region;

/// Rejection-sampling budget per requested point.
pub const TRIES_PER_POINT: usize = 10_000;

/// Uniform draws from the bounds, keeping those inside `region`.
pub fn rejection_sample<R: Rng + ?Sized>(
    region: &Region,
    n: usize,
    max_tries: usize,
    rng: &mut R,
) -> Result<Vec<Point>> {
    let mut accepted = Vec::with_capacity(n);
    let mut tries = 0;
    while accepted.len() < n && tries < max_tries {
        tries += 1;
        let p = region.bounds.sample_uniform(rng);
        if region.contains(&p) {
            accepted.push(p);
        }
    }
    if accepted.len() < n {
        return Err(Error::infeasible(
            format!(
                "{} of {n} points accepted after {max_tries} draws",
                accepted.len()
            ),
            accepted,
        ));
    }
    Ok(accepted)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConfig {
    /// Initial half-extent as a fraction of each dimension's width.
    pub delta: f64,
    /// Expansion stops once strictly more than this fraction of the
    /// rectangle's points fall outside the region.
    pub outside_fraction: f64,
    pub growth_factor: f64,
    pub samples_per_anchor: usize,
    pub max_rounds: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            delta: 1e-4,
            outside_fraction: 0.10,
            growth_factor: 1.5,
            samples_per_anchor: 64,
            max_rounds: 50,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.outside_fraction > 0.0 && self.outside_fraction < 1.0) {
            return Err(Error::Config(format!(
                "outside_fraction must lie in (0, 1), got {}",
                self.outside_fraction
            )));
        }
        if self.growth_factor.is_nan()
            || self.growth_factor <= 1.0
            || self.delta.is_nan()
            || self.delta <= 0.0
        {
            return Err(Error::Config(
                "growth_factor must exceed 1 and delta must be positive".into(),
            ));
        }
        if self.samples_per_anchor == 0 || self.max_rounds == 0 {
            return Err(Error::Config(
                "samples_per_anchor and max_rounds must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Grows a small Sobol-filled box around every anchor until too many of its
/// points leave the region, and returns the points that stayed inside.
pub fn expand_and_sample<R: Rng + ?Sized>(
    region: &Region,
    anchors: &[Point],
    cfg: &ExpansionConfig,
    rng: &mut R,
) -> Result<Vec<Point>> {
    cfg.validate()?;
    if anchors.is_empty() {
        return Ok(Vec::new());
    }
    let b = &region.bounds;
    let d = b.dim();
    let mut sobol = Sobol::new(d)?;
    sobol.skip(rng.random_range(0..4096u64) * cfg.samples_per_anchor as u64);
    let n = cfg.samples_per_anchor;
    let limit = cfg.outside_fraction * n as f64;

    let mut out = Vec::new();
    let mut pts = vec![vec![0.0; d]; n];
    let mut inside = Vec::new();
    for anchor in anchors {
        let unit = sobol.next_n(n);
        let half0: Vec<f64> = (0..d).map(|i| cfg.delta * b.width(i)).collect();
        let balls = region.stable_balls(anchor);
        let mut scale = 1.0;
        for round in 0..cfg.max_rounds {
            let mut covers = true;
            let mut lo = vec![0.0; d];
            let mut hi = vec![0.0; d];
            for i in 0..d {
                let (a, h) = (anchor[i], half0[i] * scale);
                lo[i] = (a - h).max(b.lower()[i]);
                hi[i] = (a + h).min(b.upper()[i]);
                covers &= a - h <= b.lower()[i] && a + h >= b.upper()[i];
            }
            for (p, u) in pts.iter_mut().zip(&unit) {
                for i in 0..d {
                    p[i] = lo[i] + u[i] * (hi[i] - lo[i]);
                }
            }
            let r = (0..d)
                .map(|i| {
                    let e = (anchor[i] - lo[i]).max(hi[i] - anchor[i]);
                    e * e
                })
                .sum::<f64>()
                .sqrt();
            inside = region.contains_many_near(&pts, &balls, r);
            let outside = inside.iter().filter(|k| !**k).count();
            if outside as f64 > limit || covers || round + 1 == cfg.max_rounds {
                break;
            }
            scale *= cfg.growth_factor;
        }
        out.extend(
            pts.iter()
                .zip(&inside)
                .filter(|(_, keep)| **keep)
                .map(|(p, _)| Point::from_vec_unchecked(p.clone())),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub expansion: ExpansionConfig,
    /// Only the highest-reward in-region points seed the expansion.
    pub max_anchors: usize,
    /// Anchors drawn by rejection sampling when no data lies in the region.
    pub fallback_anchors: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            expansion: ExpansionConfig::default(),
            max_anchors: 20,
            fallback_anchors: 10,
        }
    }
}

/// Picks the expansion candidate with the largest expected improvement over
/// the best reward observed inside `region`.
pub fn optimize_acquisition<R: Rng + ?Sized>(
    model: &GpModel,
    region: &Region,
    dataset: &Dataset,
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Point> {
    let points: Vec<&[f64]> = dataset.iter().map(|e| e.point.as_slice()).collect();
    let membership = region.contains_many(&points);
    optimize_acquisition_with(model, region, dataset, &membership, cfg, rng)
}

/// [`optimize_acquisition`] with the region membership of every dataset
/// point already known.
pub fn optimize_acquisition_with<R: Rng + ?Sized>(
    model: &GpModel,
    region: &Region,
    dataset: &Dataset,
    membership: &[bool],
    cfg: &AcquisitionConfig,
    rng: &mut R,
) -> Result<Point> {
    let mut inside: Vec<_> = dataset
        .iter()
        .zip(membership)
        .filter(|(_, m)| **m)
        .map(|(e, _)| e)
        .collect();
    inside.sort_by(|a, b| b.reward.total_cmp(&a.reward).then(a.index.cmp(&b.index)));
    let best_reward = inside
        .first()
        .map(|e| e.reward)
        .or_else(|| dataset.best().map(|e| e.reward))
        .unwrap_or(f64::NEG_INFINITY);

    let anchors: Vec<Point> = if inside.is_empty() {
        let max_tries = TRIES_PER_POINT * cfg.fallback_anchors;
        match rejection_sample(region, cfg.fallback_anchors, max_tries, rng) {
            Ok(pts) => pts,
            Err(Error::Infeasible { accepted, .. }) if !accepted.is_empty() => accepted,
            Err(e) => return Err(e),
        }
    } else {
        inside
            .iter()
            .take(cfg.max_anchors)
            .map(|e| e.point.clone())
            .collect()
    };

    let mut candidates = expand_and_sample(region, &anchors, &cfg.expansion, rng)?;
    if candidates.is_empty() {
        return Err(Error::infeasible(
            "rectangle expansion produced no candidates",
            Vec::new(),
        ));
    }
    let (means, vars) = model.predict_many(&candidates);
    let mut best = 0;
    let mut best_ei = f64::NEG_INFINITY;
    for (i, (m, v)) in means.iter().zip(&vars).enumerate() {
        let ei = expected_improvement(*m, *v, best_reward);
        if ei > best_ei {
            best_ei = ei;
            best = i;
        }
    }
    Ok(candidates.swap_remove(best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Bounds, Mode};
    use crate::partition::{LatentAction, Side, Sign, SvmModel};
    use crate::rng::SeedSource;
    use std::sync::Arc;

    fn half_space(dim: usize) -> Region {
        let mut w = vec![0.0; dim];
        w[0] = 1.0;
        Region {
            constraints: vec![(
                Arc::new(LatentAction {
                    model: SvmModel::linear(w, 0.0),
                    good_side: Sign::Positive,
                }),
                Side::Good,
            )],
            bounds: Bounds::uniform(dim, -1.0, 1.0).unwrap(),
        }
    }

    fn never(dim: usize) -> Region {
        // Decision is always -1, so nothing is on the good side.
        let mut r = half_space(dim);
        r.constraints[0].0 = Arc::new(LatentAction {
            model: SvmModel::linear(vec![0.0; dim], -1.0),
            good_side: Sign::Positive,
        });
        r
    }

    #[test]
    fn unconstrained_acceptance_is_total() {
        let r = Region::unconstrained(Bounds::uniform(3, 0.0, 1.0).unwrap());
        let mut rng = SeedSource::new(1).stream("rs", 0);
        let pts = rejection_sample(&r, 100, 100, &mut rng).unwrap();
        assert_eq!(pts.len(), 100);
    }

    #[test]
    fn half_space_acceptance_rate() {
        let r = half_space(2);
        let mut rng = SeedSource::new(2).stream("rs", 0);
        let hits = (0..10_000)
            .filter(|_| r.contains(&r.bounds.sample_uniform(&mut rng)))
            .count();
        let rate = hits as f64 / 10_000.0;
        assert!((rate - 0.5).abs() < 0.05, "{rate}");
    }

    #[test]
    fn always_reject_is_infeasible() {
        let mut rng = SeedSource::new(3).stream("rs", 0);
        match rejection_sample(&never(2), 3, 1000, &mut rng) {
            Err(Error::Infeasible { accepted, .. }) => assert!(accepted.is_empty()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn expansion_unconstrained_returns_everything() {
        let r = Region::unconstrained(Bounds::uniform(3, -2.0, 2.0).unwrap());
        let anchors = vec![Point::new(vec![0.1, -0.3, 1.0]).unwrap()];
        let mut rng = SeedSource::new(4).stream("ex", 0);
        let cfg = ExpansionConfig::default();
        let pts = expand_and_sample(&r, &anchors, &cfg, &mut rng).unwrap();
        assert_eq!(pts.len(), cfg.samples_per_anchor);
        // Grown to cover the whole box, so points spread over most of it.
        let spread = pts.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max)
            - pts.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        assert!(spread > 2.0);
    }

    #[test]
    fn expansion_respects_region_near_boundary() {
        let r = half_space(2);
        for seed in 0..100u64 {
            let mut rng = SeedSource::new(seed).stream("ex", 0);
            let anchor = Point::new(vec![
                rng.random_range(0.0..0.05),
                rng.random_range(-1.0..1.0),
            ])
            .unwrap();
            let pts =
                expand_and_sample(&r, &[anchor], &ExpansionConfig::default(), &mut rng).unwrap();
            assert!(!pts.is_empty());
            assert!(pts.iter().all(|p| r.contains(p)));
        }
    }

    #[test]
    fn expansion_is_deterministic_and_empty_for_no_anchors() {
        let r = half_space(3);
        let anchors = vec![Point::new(vec![0.5, 0.0, 0.0]).unwrap()];
        let cfg = ExpansionConfig::default();
        let a =
            expand_and_sample(&r, &anchors, &cfg, &mut SeedSource::new(5).stream("ex", 0)).unwrap();
        let b =
            expand_and_sample(&r, &anchors, &cfg, &mut SeedSource::new(5).stream("ex", 0)).unwrap();
        assert_eq!(a, b);
        assert!(
            expand_and_sample(&r, &[], &cfg, &mut SeedSource::new(5).stream("ex", 0))
                .unwrap()
                .is_empty()
        );
    }

    #[test]
    fn expansion_config_validation() {
        let bad = ExpansionConfig {
            outside_fraction: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(ExpansionConfig::default().delta, 1e-4);
    }

    #[test]
    fn single_candidate_is_returned() {
        let b = Bounds::uniform(1, 0.0, 1.0).unwrap();
        let mut ds = Dataset::new(b.clone(), Mode::Minimize);
        ds.record(Point::new(vec![0.2]).unwrap(), 1.0).unwrap();
        ds.record(Point::new(vec![0.8]).unwrap(), 2.0).unwrap();
        let x: Vec<_> = ds.iter().map(|e| e.point.clone()).collect();
        let y: Vec<_> = ds.iter().map(|e| e.reward).collect();
        let gp = GpModel::with_params(
            &x,
            &y,
            &b,
            crate::gp::KernelParams::isotropic(1, 0.2, 1.0, 1e-6),
        )
        .unwrap();
        let cfg = AcquisitionConfig {
            expansion: ExpansionConfig {
                samples_per_anchor: 1,
                ..Default::default()
            },
            max_anchors: 1,
            fallback_anchors: 1,
        };
        let region = Region::unconstrained(b);
        let mut rng = SeedSource::new(1).stream("acq", 0);
        let p = optimize_acquisition(&gp, &region, &ds, &cfg, &mut rng).unwrap();
        let expected = expand_and_sample(
            &region,
            &[Point::new(vec![0.2]).unwrap()],
            &cfg.expansion,
            &mut SeedSource::new(1).stream("acq", 0),
        )
        .unwrap();
        assert_eq!(vec![p], expected);
    }
}
