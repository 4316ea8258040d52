//! Gaussian-process regression used by the local samplers.
//!
//! Inputs are rescaled to the unit cube of the supplied bounds and targets
//! are standardized on every fit; predictions are mapped back to reward
//! space.

pub mod kernel;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use statrs::function::erf::erfc;

pub use kernel::{
    covariance, log_marginal_likelihood, log_marginal_likelihood_grad, matern52, KernelParams,
};

use crate::domain::Bounds;
use crate::error::{Error, Result};
use kernel::{LogBox, PairCache};

const JITTER_LADDER: [f64; 4] = [0.0, 1e-6, 1e-4, 1e-2];
/// Noise floor used when every training input is the same point.
const DUPLICATE_NOISE_FLOOR: f64 = 1e-2;

#[derive(Debug, Clone)]
pub struct GpFitConfig {
    /// Gradient-ascent steps per start.
    pub steps: usize,
    /// Number of optimization starts. The first uses `warm_start` (or a
    /// fixed default), the rest are random.
    pub restarts: usize,
    /// Hyperparameters are optimized on at most this many of the most recent
    /// points; the posterior always conditions on every point.
    pub max_fit_points: usize,
    pub warm_start: Option<KernelParams>,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            restarts: 2,
            max_fit_points: 100,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GpModel {
    bounds: Bounds,
    train_x: Vec<Vec<f64>>,
    /// Training inputs centred and divided by the lengthscales, one column
    /// per point, with their squared norms.
    scaled_t: DMatrix<f64>,
    scaled_norms: Vec<f64>,
    offset: Vec<f64>,
    train_y: DVector<f64>,
    y_mean: f64,
    y_std: f64,
    params: KernelParams,
    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
    /// Set when the noise floor had to be raised for duplicate inputs.
    pub duplicate_inputs: bool,
    pub log_marginal_likelihood: f64,
}

fn standardize(y: &[f64]) -> (Vec<f64>, f64, f64) {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = if var.sqrt() > 1e-12 * (1.0 + mean.abs()) {
        var.sqrt()
    } else {
        1.0
    };
    (y.iter().map(|v| (v - mean) / std).collect(), mean, std)
}

fn all_identical(x: &[Vec<f64>]) -> bool {
    x.windows(2).all(|w| w[0] == w[1])
}

fn default_start(dim: usize) -> KernelParams {
    KernelParams::isotropic(dim, 0.5, 1.0, 1e-3)
}

/// Projected gradient ascent with a backtracking line search.
fn ascend(
    x: &PairCache,
    y: &[f64],
    start: &[f64],
    bx: &LogBox,
    steps: usize,
) -> Option<(f64, Vec<f64>)> {
    let mut p = start.to_vec();
    bx.clamp(&mut p);
    let (mut f, mut g) = kernel::lml_grad_cached(x, y, &KernelParams::from_log(&p)).ok()?;
    let mut step = 0.5;
    for _ in 0..steps {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm.is_nan() || norm <= 1e-10 {
            break;
        }
        let mut accepted = None;
        while step > 1e-6 {
            let mut cand: Vec<f64> = p
                .iter()
                .zip(&g)
                .map(|(pi, gi)| pi + step * gi / norm)
                .collect();
            bx.clamp(&mut cand);
            let ascent: f64 = cand
                .iter()
                .zip(&p)
                .zip(&g)
                .map(|((c, pi), gi)| (c - pi) * gi)
                .sum();
            if ascent <= 0.0 {
                break;
            }
            if let Ok(fc) = kernel::lml_cached(x, y, &KernelParams::from_log(&cand)) {
                if fc >= f + 1e-4 * ascent {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(cand) = accepted else { break };
        let Ok((fc, gc)) = kernel::lml_grad_cached(x, y, &KernelParams::from_log(&cand)) else {
            break;
        };
        let gain = fc - f;
        p = cand;
        f = fc;
        g = gc;
        step = (step * 2.0).min(2.0);
        if gain < 1e-9 * (1.0 + f.abs()) {
            break;
        }
    }
    Some((f, p))
}

/// Unit-cube inputs, standardized targets, target mean and target std.
type Prepared = (Vec<Vec<f64>>, Vec<f64>, f64, f64);

impl GpModel {
    /// Fits hyperparameters by maximizing the log marginal likelihood, then
    /// conditions on all points.
    pub fn fit<P: AsRef<[f64]>, R: Rng + ?Sized>(
        x: &[P],
        y: &[f64],
        bounds: &Bounds,
        config: &GpFitConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let (ux, ys, y_mean, y_std) = Self::prepare(x, y, bounds)?;
        let dim = bounds.dim();
        let duplicate = all_identical(&ux);
        let noise_floor = if duplicate {
            DUPLICATE_NOISE_FLOOR
        } else {
            kernel::MIN_NOISE
        };
        let bx = LogBox::for_unit_cube(dim, noise_floor);

        let m = ux.len().min(config.max_fit_points.max(2));
        let fit_x = &ux[ux.len() - m..];
        let fit_y = &ys[ys.len() - m..];
        let cache = PairCache::new(fit_x);

        let mut best: Option<(f64, Vec<f64>)> = None;
        for start_idx in 0..config.restarts.max(1) {
            let start = if start_idx == 0 {
                config
                    .warm_start
                    .clone()
                    .unwrap_or_else(|| default_start(dim))
                    .to_log()
            } else {
                bx.lo
                    .iter()
                    .zip(&bx.hi)
                    .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                    .collect()
            };
            if let Some((f, p)) = ascend(&cache, fit_y, &start, &bx, config.steps) {
                if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
                    best = Some((f, p));
                }
            }
        }
        let params = match best {
            Some((_, p)) => KernelParams::from_log(&p),
            None => {
                let mut p = default_start(dim).to_log();
                bx.clamp(&mut p);
                KernelParams::from_log(&p)
            }
        };
        let mut model = Self::condition(bounds.clone(), ux, ys, y_mean, y_std, params)?;
        model.duplicate_inputs = duplicate;
        Ok(model)
    }

    /// Conditions on the data with fixed hyperparameters.
    pub fn with_params<P: AsRef<[f64]>>(
        x: &[P],
        y: &[f64],
        bounds: &Bounds,
        params: KernelParams,
    ) -> Result<Self> {
        if params.dim() != bounds.dim() {
            return Err(Error::Domain(format!(
                "{} lengthscales for a {}-dimensional space",
                params.dim(),
                bounds.dim()
            )));
        }
        let (ux, ys, y_mean, y_std) = Self::prepare(x, y, bounds)?;
        Self::condition(bounds.clone(), ux, ys, y_mean, y_std, params)
    }

    fn prepare<P: AsRef<[f64]>>(x: &[P], y: &[f64], bounds: &Bounds) -> Result<Prepared> {
        if x.len() < 2 {
            return Err(Error::State(format!(
                "a GP fit needs at least 2 points, got {}",
                x.len()
            )));
        }
        if x.len() != y.len() {
            return Err(Error::Domain(format!(
                "{} inputs but {} targets",
                x.len(),
                y.len()
            )));
        }
        if let Some(p) = x.iter().find(|p| p.as_ref().len() != bounds.dim()) {
            return Err(Error::Domain(format!(
                "input of dimension {} for {}-dimensional bounds",
                p.as_ref().len(),
                bounds.dim()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite GP target".into()));
        }
        let ux: Vec<Vec<f64>> = x.iter().map(|p| bounds.to_unit(p.as_ref())).collect();
        let (ys, mean, std) = standardize(y);
        Ok((ux, ys, mean, std))
    }

    fn condition(
        bounds: Bounds,
        train_x: Vec<Vec<f64>>,
        ys: Vec<f64>,
        y_mean: f64,
        y_std: f64,
        params: KernelParams,
    ) -> Result<Self> {
        let train_y = DVector::from_vec(ys);
        for jitter in JITTER_LADDER {
            let k = kernel::gram(&train_x, &params, jitter);
            if let Some(chol) = k.cholesky() {
                let alpha = chol.solve(&train_y);
                let l = chol.unpack();
                let n = train_y.len() as f64;
                let log_det = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let lml = -0.5 * train_y.dot(&alpha)
                    - 0.5 * log_det
                    - 0.5 * n * (2.0 * std::f64::consts::PI).ln();
                let (scaled_t, scaled_norms, offset) = scale_training(&train_x, &params);
                return Ok(Self {
                    bounds,
                    scaled_t,
                    scaled_norms,
                    offset,
                    train_x,
                    train_y,
                    y_mean,
                    y_std,
                    params,
                    chol: l,
                    alpha,
                    jitter,
                    duplicate_inputs: false,
                    log_marginal_likelihood: lml,
                });
            }
        }
        Err(Error::Numerical(format!(
            "Cholesky factorization failed with jitter up to {}",
            JITTER_LADDER[JITTER_LADDER.len() - 1]
        )))
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn len(&self) -> usize {
        self.train_x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train_x.is_empty()
    }

    /// Jitter that had to be added to the diagonal for a stable factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower Cholesky factor in standardized units.
    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol
    }

    /// Prior variance in reward units.
    pub fn prior_variance(&self) -> f64 {
        self.params.signal_variance * self.y_std * self.y_std
    }

    fn inv_lengthscales(&self) -> Vec<f64> {
        self.params.lengthscales.iter().map(|l| 1.0 / l).collect()
    }

    /// `points` (unit cube) centred and scaled like the training inputs, one
    /// row per point.
    fn scaled_rows(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let inv = self.inv_lengthscales();
        let d = inv.len();
        DMatrix::from_fn(points.len(), d, |i, k| {
            (points[i][k] - self.offset[k]) * inv[k]
        })
    }

    /// Cross covariance between unit-cube `points` (rows) and the training
    /// inputs (columns).
    fn cross(&self, points: &[Vec<f64>]) -> DMatrix<f64> {
        let p = self.scaled_rows(points);
        let norms: Vec<f64> = p.row_iter().map(|r| r.norm_squared()).collect();
        let mut k = &p * &self.scaled_t;
        let sig = self.params.signal_variance;
        for (j, tn) in self.scaled_norms.iter().enumerate() {
            for (i, pn) in norms.iter().enumerate() {
                let r2 = (pn + tn - 2.0 * k[(i, j)]).max(0.0);
                k[(i, j)] = sig * matern52(r2.sqrt());
            }
        }
        k
    }

    /// Posterior mean and variance in reward units.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let (m, v) = self.predict_many(&[x]);
        (m[0], v[0])
    }

    pub fn predict_many<P: AsRef<[f64]>>(&self, xs: &[P]) -> (Vec<f64>, Vec<f64>) {
        let unit: Vec<Vec<f64>> = xs.iter().map(|p| self.bounds.to_unit(p.as_ref())).collect();
        let ks = self.cross(&unit);
        let mean = &ks * &self.alpha;
        let v = self
            .chol
            .solve_lower_triangular(&ks.transpose())
            .expect("Cholesky factor has a nonzero diagonal");
        let sig = self.params.signal_variance;
        let scale = self.y_std * self.y_std;
        let means = mean.iter().map(|m| m * self.y_std + self.y_mean).collect();
        let vars = v
            .column_iter()
            .map(|c| ((sig - c.norm_squared()) * scale).max(0.0))
            .collect();
        (means, vars)
    }

    /// One approximate joint posterior draw at `xs`, in reward units.
    ///
    /// The prior path is drawn with `num_features` random Fourier features of
    /// the Matérn-5/2 spectral density and then moved onto the posterior by
    /// an exact data update: `f(x) + k(x, X) (K + s I)^-1 (y - f(X) - e)`.
    pub fn sample_posterior<P: AsRef<[f64]>, R: Rng + ?Sized>(
        &self,
        xs: &[P],
        num_features: usize,
        rng: &mut R,
    ) -> Vec<f64> {
        let d = self.bounds.dim();
        let inv = self.inv_lengthscales();
        let chi = ChiSquared::new(5.0).expect("positive degrees of freedom");
        // Spectral frequencies as columns, in unit-cube coordinates.
        let mut omega = DMatrix::zeros(d, num_features);
        let mut phase = DVector::zeros(num_features);
        let mut weight = DVector::zeros(num_features);
        for f in 0..num_features {
            let u: f64 = chi.sample(rng);
            let scale = (5.0 / u).sqrt();
            for k in 0..d {
                let z: f64 = StandardNormal.sample(rng);
                omega[(k, f)] = z * scale * inv[k];
            }
            phase[f] = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
            weight[f] = StandardNormal.sample(rng);
        }
        let amp = (2.0 * self.params.signal_variance / num_features as f64).sqrt();
        let prior = |points: &[Vec<f64>]| -> DVector<f64> {
            let rows = DMatrix::from_fn(points.len(), d, |i, k| points[i][k]);
            let mut args = rows * &omega;
            for (f, mut col) in args.column_iter_mut().enumerate() {
                col.apply(|a| *a = (*a + phase[f]).cos());
            }
            (args * &weight) * amp
        };

        let noise_sd = (self.params.noise_variance + self.jitter).sqrt();
        let at_train = prior(&self.train_x);
        let resid = DVector::from_iterator(
            self.train_x.len(),
            self.train_y.iter().zip(at_train.iter()).map(|(y, f)| {
                let e: f64 = StandardNormal.sample(rng);
                y - f - noise_sd * e
            }),
        );
        let tmp = self
            .chol
            .solve_lower_triangular(&resid)
            .expect("Cholesky factor has a nonzero diagonal");
        let update = self
            .chol
            .transpose()
            .solve_upper_triangular(&tmp)
            .expect("Cholesky factor has a nonzero diagonal");

        let unit: Vec<Vec<f64>> = xs.iter().map(|p| self.bounds.to_unit(p.as_ref())).collect();
        let data_term = self.cross(&unit) * update;
        let draw = prior(&unit) + data_term;
        draw.iter().map(|v| v * self.y_std + self.y_mean).collect()
    }
}

fn scale_training(x: &[Vec<f64>], params: &KernelParams) -> (DMatrix<f64>, Vec<f64>, Vec<f64>) {
    let n = x.len();
    let d = params.dim();
    let offset: Vec<f64> = (0..d)
        .map(|k| x.iter().map(|p| p[k]).sum::<f64>() / n as f64)
        .collect();
    let t = DMatrix::from_fn(d, n, |k, j| (x[j][k] - offset[k]) / params.lengthscales[k]);
    let norms = t.column_iter().map(|c| c.norm_squared()).collect();
    (t, norms, offset)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Expected improvement over `best` for a maximization target.
pub fn expected_improvement(mean: f64, variance: f64, best: f64) -> f64 {
    let sigma = variance.max(0.0).sqrt();
    let diff = mean - best;
    if sigma <= 0.0 {
        return diff.max(0.0);
    }
    let z = diff / sigma;
    (diff * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}
