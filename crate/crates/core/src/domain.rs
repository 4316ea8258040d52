//! Points, boxes, evaluation records and the objective contract.
//!
//! The optimizer always maximizes *reward*. An [`Objective`] declares whether
//! its raw value is minimized or maximized, and [`Mode::reward`] maps the raw
//! value into reward space.

use std::ops::Deref;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite coordinate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Point(Vec<f64>);

impl Point {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if let Some(i) = coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Domain(format!(
                "coordinate {i} is not finite ({})",
                coords[i]
            )));
        }
        Ok(Point(coords))
    }

    pub(crate) fn from_vec_unchecked(coords: Vec<f64>) -> Self {
        debug_assert!(coords.iter().all(|c| c.is_finite()));
        Point(coords)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for Point {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl AsRef<[f64]> for Point {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Point {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Point::new(v)
    }
}

impl From<Point> for Vec<f64> {
    fn from(p: Point) -> Vec<f64> {
        p.0
    }
}

/// Axis-aligned search box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::Domain(
                "bounds must have at least one dimension".into(),
            ));
        }
        if lower.len() != upper.len() {
            return Err(Error::Domain(format!(
                "lower has {} entries but upper has {}",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Domain(format!(
                    "dimension {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The same interval `[lo, hi]` in every one of `dim` dimensions.
    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Maps `x` into the unit cube.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.lower[i]) / self.width(i))
            .collect()
    }

    /// Maps a unit-cube point back into the box.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| (self.lower[i] + v * self.width(i)).clamp(self.lower[i], self.upper[i]))
            .collect()
    }

    pub fn clip(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let coords = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + rng.random::<f64>() * (hi - lo))
            .collect();
        Point(coords)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Minimize,
    Maximize,
}

impl Mode {
    pub fn reward(self, value: f64) -> f64 {
        match self {
            Mode::Minimize => -value,
            Mode::Maximize => value,
        }
    }

    /// Inverse of [`Mode::reward`].
    pub fn value(self, reward: f64) -> f64 {
        match self {
            Mode::Minimize => -reward,
            Mode::Maximize => reward,
        }
    }

    /// True when `a` is a strictly better raw value than `b`.
    pub fn improves(self, a: f64, b: f64) -> bool {
        match self {
            Mode::Minimize => a < b,
            Mode::Maximize => a > b,
        }
    }
}

/// A black-box function over a box domain.
///
/// Implementations must be deterministic and safe to share between threads.
pub trait Objective: Send + Sync {
    fn name(&self) -> &str;

    fn bounds(&self) -> &Bounds;

    fn mode(&self) -> Mode {
        Mode::Minimize
    }

    /// Raw objective value. `x` is guaranteed to lie inside `bounds()`.
    fn value(&self, x: &[f64]) -> f64;

    fn dim(&self) -> usize {
        self.bounds().dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub point: Point,
    pub value: f64,
    pub reward: f64,
    pub index: usize,
}

/// Ordered archive of every true objective evaluation in a run.
#[derive(Debug, Clone)]
pub struct Dataset {
    evals: Vec<Evaluation>,
    bounds: Bounds,
    mode: Mode,
}

impl Dataset {
    pub fn new(bounds: Bounds, mode: Mode) -> Self {
        Self {
            evals: Vec::new(),
            bounds,
            mode,
        }
    }

    pub fn for_objective(objective: &dyn Objective) -> Self {
        Self::new(objective.bounds().clone(), objective.mode())
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.evals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.evals.is_empty()
    }

    pub fn evals(&self) -> &[Evaluation] {
        &self.evals
    }

    pub fn get(&self, index: usize) -> Option<&Evaluation> {
        self.evals.get(index)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Evaluation> {
        self.evals.iter()
    }

    /// Appends an already computed value. Used for replaying traces.
    pub fn record(&mut self, point: Point, value: f64) -> Result<&Evaluation> {
        if point.dim() != self.bounds.dim() {
            return Err(Error::Domain(format!(
                "point has dimension {} but bounds have {}",
                point.dim(),
                self.bounds.dim()
            )));
        }
        if !self.bounds.contains(&point) {
            return Err(Error::Domain(format!(
                "point {:?} lies outside the bounds",
                point.as_slice()
            )));
        }
        if !value.is_finite() {
            return Err(Error::Evaluation(format!("objective returned {value}")));
        }
        let index = self.evals.len();
        self.evals.push(Evaluation {
            point,
            value,
            reward: self.mode.reward(value),
            index,
        });
        Ok(&self.evals[index])
    }

    /// Best evaluation by reward; ties go to the earliest index.
    pub fn best(&self) -> Option<&Evaluation> {
        best_of(self.evals.iter())
    }
}

pub(crate) fn best_of<'a>(
    evals: impl IntoIterator<Item = &'a Evaluation>,
) -> Option<&'a Evaluation> {
    let mut best: Option<&Evaluation> = None;
    for e in evals {
        match best {
            Some(b) if !(e.reward > b.reward || (e.reward == b.reward && e.index < b.index)) => {}
            _ => best = Some(e),
        }
    }
    best
}

/// Evaluates `objective` at `point` and appends the result to `dataset`.
pub fn evaluate(
    objective: &dyn Objective,
    point: Point,
    dataset: &mut Dataset,
) -> Result<Evaluation> {
    if point.dim() != objective.dim() {
        return Err(Error::Domain(format!(
            "point has dimension {} but objective {} expects {}",
            point.dim(),
            objective.name(),
            objective.dim()
        )));
    }
    if !objective.bounds().contains(&point) {
        return Err(Error::Domain(format!(
            "point {:?} lies outside the bounds of {}",
            point.as_slice(),
            objective.name()
        )));
    }
    let value = objective.value(&point);
    if !value.is_finite() {
        return Err(Error::Evaluation(format!(
            "{} returned non-finite value {value}",
            objective.name()
        )));
    }
    dataset.record(point, value).cloned()
}

/// Best evaluation by reward, ties broken by lowest index.
pub fn best_so_far(dataset: &Dataset) -> Result<&Evaluation> {
    dataset
        .best()
        .ok_or_else(|| Error::State("best_so_far called on an empty dataset".into()))
}
