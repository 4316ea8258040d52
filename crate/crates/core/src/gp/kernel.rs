//! Matérn-5/2 ARD covariance and the Gaussian log marginal likelihood with
//! its gradient in log-parameter space.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

pub const MIN_LENGTHSCALE: f64 = 5e-3;
pub const MIN_NOISE: f64 = 1e-6;
pub const MAX_NOISE: f64 = 0.2;
pub const MIN_SIGNAL: f64 = 0.05;
pub const MAX_SIGNAL: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64) -> Self {
        Self {
            lengthscales,
            signal_variance,
            noise_variance,
        }
    }

    pub fn isotropic(
        dim: usize,
        lengthscale: f64,
        signal_variance: f64,
        noise_variance: f64,
    ) -> Self {
        Self::new(vec![lengthscale; dim], signal_variance, noise_variance)
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// `[log l_1 .. log l_d, log signal, log noise]`
    pub fn to_log(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.lengthscales.iter().map(|l| l.ln()).collect();
        v.push(self.signal_variance.ln());
        v.push(self.noise_variance.ln());
        v
    }

    pub fn from_log(v: &[f64]) -> Self {
        let d = v.len() - 2;
        Self {
            lengthscales: v[..d].iter().map(|x| x.exp()).collect(),
            signal_variance: v[d].exp(),
            noise_variance: v[d + 1].exp(),
        }
    }
}

/// Box on log parameters used while fitting inputs scaled to the unit cube.
#[derive(Debug, Clone)]
pub(crate) struct LogBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl LogBox {
    pub fn for_unit_cube(dim: usize, noise_floor: f64) -> Self {
        let max_len = 2.0 * (dim as f64).sqrt();
        let mut lo = vec![MIN_LENGTHSCALE.ln(); dim];
        let mut hi = vec![max_len.ln(); dim];
        lo.push(MIN_SIGNAL.ln());
        hi.push(MAX_SIGNAL.ln());
        lo.push(noise_floor.max(MIN_NOISE).ln());
        hi.push(MAX_NOISE.max(noise_floor).ln());
        Self { lo, hi }
    }

    pub fn clamp(&self, v: &mut [f64]) {
        for ((x, lo), hi) in v.iter_mut().zip(&self.lo).zip(&self.hi) {
            *x = x.clamp(*lo, *hi);
        }
    }
}

/// Matérn-5/2 correlation at scaled distance `r`.
#[inline]
pub fn matern52(r: f64) -> f64 {
    let s = SQRT5 * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

#[inline]
pub(crate) fn scaled_sq_dist(a: &[f64], b: &[f64], inv_len: &[f64]) -> f64 {
    let mut acc = 0.0;
    for ((x, y), il) in a.iter().zip(b).zip(inv_len) {
        let t = (x - y) * il;
        acc += t * t;
    }
    acc
}

/// Prior covariance between two inputs (no noise term).
pub fn covariance(a: &[f64], b: &[f64], params: &KernelParams) -> f64 {
    let inv: Vec<f64> = params.lengthscales.iter().map(|l| 1.0 / l).collect();
    params.signal_variance * matern52(scaled_sq_dist(a, b, &inv).sqrt())
}

/// `K + (noise + jitter) I`.
pub fn gram(x: &[Vec<f64>], params: &KernelParams, jitter: f64) -> DMatrix<f64> {
    let n = x.len();
    let inv: Vec<f64> = params.lengthscales.iter().map(|l| 1.0 / l).collect();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.signal_variance + params.noise_variance + jitter;
        for j in 0..i {
            let v = params.signal_variance * matern52(scaled_sq_dist(&x[i], &x[j], &inv).sqrt());
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Per-dimension squared differences of every input pair `i > j`, so that
/// repeated likelihood evaluations only rescale them.
pub(crate) struct PairCache {
    n: usize,
    d: usize,
    sq: Vec<f64>,
}

impl PairCache {
    pub fn new(x: &[Vec<f64>]) -> Self {
        let n = x.len();
        let d = x.first().map_or(0, Vec::len);
        let mut sq = Vec::with_capacity(n * n.saturating_sub(1) / 2 * d);
        for i in 0..n {
            for j in 0..i {
                sq.extend(x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)));
            }
        }
        Self { n, d, sq }
    }

    /// Scaled distances `r_ij` for `i > j` in pair order.
    fn distances(&self, inv_sq: &[f64]) -> Vec<f64> {
        self.sq
            .chunks_exact(self.d.max(1))
            .map(|c| c.iter().zip(inv_sq).map(|(a, b)| a * b).sum::<f64>().sqrt())
            .collect()
    }

    fn gram(&self, r: &[f64], params: &KernelParams) -> DMatrix<f64> {
        let n = self.n;
        let sig = params.signal_variance;
        let mut k = DMatrix::zeros(n, n);
        let mut p = 0;
        for i in 0..n {
            k[(i, i)] = sig + params.noise_variance;
            for j in 0..i {
                let v = sig * matern52(r[p]);
                k[(i, j)] = v;
                k[(j, i)] = v;
                p += 1;
            }
        }
        k
    }
}

fn inv_sq(params: &KernelParams) -> Vec<f64> {
    params.lengthscales.iter().map(|l| 1.0 / (l * l)).collect()
}

/// Log marginal likelihood of zero-mean targets `y`.
pub fn log_marginal_likelihood(x: &[Vec<f64>], y: &[f64], params: &KernelParams) -> Result<f64> {
    lml_cached(&PairCache::new(x), y, params)
}

pub(crate) fn lml_cached(cache: &PairCache, y: &[f64], params: &KernelParams) -> Result<f64> {
    let r = cache.distances(&inv_sq(params));
    let chol = cache
        .gram(&r, params)
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance matrix is not positive definite".into()))?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det: f64 = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>();
    let n = y.len() as f64;
    Ok(-0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

/// Log marginal likelihood and its gradient with respect to
/// [`KernelParams::to_log`].
pub fn log_marginal_likelihood_grad(
    x: &[Vec<f64>],
    y: &[f64],
    params: &KernelParams,
) -> Result<(f64, Vec<f64>)> {
    lml_grad_cached(&PairCache::new(x), y, params)
}

pub(crate) fn lml_grad_cached(
    cache: &PairCache,
    y: &[f64],
    params: &KernelParams,
) -> Result<(f64, Vec<f64>)> {
    let n = cache.n;
    let d = params.dim();
    let inv2 = inv_sq(params);
    let sig = params.signal_variance;
    let r = cache.distances(&inv2);
    let chol = cache
        .gram(&r, params)
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance matrix is not positive definite".into()))?;
    let yv = DVector::from_column_slice(y);
    let alpha = chol.solve(&yv);
    let log_det: f64 = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    let lml =
        -0.5 * yv.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // W = alpha alpha' - K^-1; dLML/dθ = 0.5 tr(W dK/dθ).
    let kinv = chol.inverse();
    let mut grad = vec![0.0; d + 2];
    let mut trace_w = 0.0;
    let mut p = 0;
    for i in 0..n {
        let w_ii = alpha[i] * alpha[i] - kinv[(i, i)];
        trace_w += w_ii;
        grad[d] += 0.5 * w_ii * sig;
        for j in 0..i {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let s = SQRT5 * r[p];
            let e = (-s).exp();
            // Off-diagonal terms appear twice in the symmetric trace.
            grad[d] += w * sig * (1.0 + s + s * s / 3.0) * e;
            let common = w * sig * (5.0 / 3.0) * (1.0 + s) * e;
            let sq = &cache.sq[p * d..(p + 1) * d];
            for ((g, q), il) in grad[..d].iter_mut().zip(sq).zip(&inv2) {
                *g += common * q * il;
            }
            p += 1;
        }
    }
    grad[d + 1] = 0.5 * params.noise_variance * trace_w;
    Ok((lml, grad))
}
