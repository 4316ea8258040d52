//! Synthetic benchmark functions.
//!
//! All four are minimized. Default boxes: Ackley `[-5, 10]^d`, Rosenbrock
//! `[-10, 10]^d`, Rastrigin `[-5.12, 5.12]^d`, Levy `[-10, 10]^d`.

use std::f64::consts::{E, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{Bounds, Objective};
use crate::error::{Error, Result};

/// Ackley. Global minimum 0 at the origin.
pub fn ackley(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let sq = x.iter().map(|v| v * v).sum::<f64>() / n;
    let cos = x.iter().map(|v| (2.0 * PI * v).cos()).sum::<f64>() / n;
    -20.0 * (-0.2 * sq.sqrt()).exp() - cos.exp() + 20.0 + E
}

/// Rosenbrock. Global minimum 0 at `(1, ..., 1)`. Needs at least two dimensions.
pub fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

/// Rastrigin. Global minimum 0 at the origin.
pub fn rastrigin(x: &[f64]) -> f64 {
    10.0 * x.len() as f64
        + x.iter()
            .map(|v| v * v - 10.0 * (2.0 * PI * v).cos())
            .sum::<f64>()
}

/// Levy. Global minimum 0 at `(1, ..., 1)`.
pub fn levy(x: &[f64]) -> f64 {
    let w: Vec<f64> = x.iter().map(|v| 1.0 + (v - 1.0) / 4.0).collect();
    let d = w.len();
    let head = (PI * w[0]).sin().powi(2);
    let body: f64 = w[..d - 1]
        .iter()
        .map(|wi| (wi - 1.0).powi(2) * (1.0 + 10.0 * (PI * wi + 1.0).sin().powi(2)))
        .sum();
    let last = w[d - 1];
    let tail = (last - 1.0).powi(2) * (1.0 + (2.0 * PI * last).sin().powi(2));
    head + body + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchmarkKind {
    Ackley,
    Rosenbrock,
    Rastrigin,
    Levy,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 4] = [
        BenchmarkKind::Ackley,
        BenchmarkKind::Rosenbrock,
        BenchmarkKind::Rastrigin,
        BenchmarkKind::Levy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::Ackley => "ackley",
            BenchmarkKind::Rosenbrock => "rosenbrock",
            BenchmarkKind::Rastrigin => "rastrigin",
            BenchmarkKind::Levy => "levy",
        }
    }

    /// `(lower, upper)` used in every dimension by default.
    pub fn default_interval(self) -> (f64, f64) {
        match self {
            BenchmarkKind::Ackley => (-5.0, 10.0),
            BenchmarkKind::Rosenbrock => (-10.0, 10.0),
            BenchmarkKind::Rastrigin => (-5.12, 5.12),
            BenchmarkKind::Levy => (-10.0, 10.0),
        }
    }

    pub fn min_dim(self) -> usize {
        match self {
            BenchmarkKind::Rosenbrock => 2,
            _ => 1,
        }
    }

    /// Location of the global minimum.
    pub fn optimizer(self, dim: usize) -> Vec<f64> {
        match self {
            BenchmarkKind::Ackley | BenchmarkKind::Rastrigin => vec![0.0; dim],
            BenchmarkKind::Rosenbrock | BenchmarkKind::Levy => vec![1.0; dim],
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match self {
            BenchmarkKind::Ackley => ackley(x),
            BenchmarkKind::Rosenbrock => rosenbrock(x),
            BenchmarkKind::Rastrigin => rastrigin(x),
            BenchmarkKind::Levy => levy(x),
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = BenchmarkKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!(
                    "unknown objective '{s}' (valid names: {})",
                    names.join(", ")
                ))
            })
    }
}

/// A named benchmark bound to a dimension and search box.
#[derive(Debug, Clone)]
pub struct Benchmark {
    kind: BenchmarkKind,
    bounds: Bounds,
}

impl Benchmark {
    /// Looks the function up by name and uses its default box.
    pub fn new(name: &str, dim: usize) -> Result<Self> {
        Self::from_kind(name.parse()?, dim)
    }

    pub fn from_kind(kind: BenchmarkKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        let (lo, hi) = kind.default_interval();
        Self::with_bounds(kind, Bounds::uniform(dim, lo, hi)?)
    }

    pub fn with_bounds(kind: BenchmarkKind, bounds: Bounds) -> Result<Self> {
        if bounds.dim() < kind.min_dim() {
            return Err(Error::Domain(format!(
                "{kind} needs at least {} dimensions, got {}",
                kind.min_dim(),
                bounds.dim()
            )));
        }
        Ok(Self { kind, bounds })
    }

    pub fn kind(&self) -> BenchmarkKind {
        self.kind
    }
}

impl Objective for Benchmark {
    fn name(&self) -> &str {
        self.kind.name()
    }

    fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.kind.eval(x)
    }
}
