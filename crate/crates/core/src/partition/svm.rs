//! Soft-margin binary SVM trained with sequential minimal optimization.
//!
//! The solver follows the libsvm C-SVC formulation: minimize
//! `0.5 a'Qa - e'a` subject to `0 <= a_i <= C` and `y'a = 0`, choosing the
//! working pair with second-order information.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 1e-12;
/// KKT violation tolerance.
pub const KKT_TOLERANCE: f64 = 1e-3;
pub const POLY_DEGREE: u32 = 3;
const POLY_COEF0: f64 = 1.0;

/// Kernel family requested by configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    Linear,
    #[serde(alias = "polynomial")]
    Poly,
    #[default]
    Rbf,
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelChoice::Linear => "linear",
            KernelChoice::Poly => "poly",
            KernelChoice::Rbf => "rbf",
        })
    }
}

impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(KernelChoice::Linear),
            "poly" | "polynomial" => Ok(KernelChoice::Poly),
            "rbf" => Ok(KernelChoice::Rbf),
            other => Err(Error::Config(format!(
                "unknown kernel '{other}' (valid: linear, poly, rbf)"
            ))),
        }
    }
}

/// A kernel with its data-dependent parameters resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SvmKernel {
    Linear,
    Polynomial { degree: u32, gamma: f64, coef0: f64 },
    Rbf { gamma: f64 },
}

impl SvmKernel {
    /// Resolves `choice` for the given training inputs. `gamma` is
    /// `1 / (d * var(X))` with the variance taken over every entry of X.
    pub fn resolve(choice: KernelChoice, points: &[&[f64]]) -> Self {
        let d = points.first().map_or(1, |p| p.len()).max(1);
        let count = (points.len() * d) as f64;
        let mean = points.iter().flat_map(|p| p.iter()).sum::<f64>() / count;
        let var = points
            .iter()
            .flat_map(|p| p.iter())
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / count;
        let gamma = if var > 0.0 && var.is_finite() {
            1.0 / (d as f64 * var)
        } else {
            1.0 / d as f64
        };
        match choice {
            KernelChoice::Linear => SvmKernel::Linear,
            KernelChoice::Poly => SvmKernel::Polynomial {
                degree: POLY_DEGREE,
                gamma,
                coef0: POLY_COEF0,
            },
            KernelChoice::Rbf => SvmKernel::Rbf { gamma },
        }
    }

    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            SvmKernel::Linear => dot(a, b),
            SvmKernel::Polynomial {
                degree,
                gamma,
                coef0,
            } => (gamma * dot(a, b) + coef0).powi(degree as i32),
            SvmKernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// Relative error bound of [`exp_nonpositive`] against `f64::exp`.
const EXP_REL_ERR: f64 = 1e-13;

/// RBF decision terms over a column-major `points x support vectors` matrix
/// of inner products, accumulated into per-point values and error bounds.
struct RbfTerms<'a> {
    gram: &'a mut [f64],
    xn: &'a [f64],
    sn: &'a [f64],
    gamma: f64,
    coeffs: &'a [f64],
    values: &'a mut [f64],
    bound: &'a mut [f64],
}

impl RbfTerms<'_> {
    fn run(&mut self) {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx512f") {
            // SAFETY: the required CPU feature was detected above.
            unsafe { self.run_avx512() };
            return;
        }
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
        {
            // SAFETY: the required CPU features were detected above.
            unsafe { self.run_avx2() };
            return;
        }
        self.run_generic();
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    unsafe fn run_avx512(&mut self) {
        self.run_generic();
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn run_avx2(&mut self) {
        self.run_generic();
    }

    #[inline(always)]
    fn run_generic(&mut self) {
        let m = self.xn.len();
        for ((col, snj), c) in self.gram.chunks_exact_mut(m).zip(self.sn).zip(self.coeffs) {
            for (v, xni) in col.iter_mut().zip(self.xn) {
                let d2 = xni + snj - 2.0 * *v;
                *v = -self.gamma * if d2 > 0.0 { d2 } else { 0.0 };
            }
            exp_nonpositive(col);
            for ((v, acc), b) in col
                .iter()
                .zip(self.values.iter_mut())
                .zip(self.bound.iter_mut())
            {
                let t = c * v;
                *acc += t;
                *b += t.abs();
            }
        }
    }
}

/// In-place `exp` for inputs `<= 0`, written to vectorize. Inputs below -700
/// map to 0, an absolute error under 1e-304.
#[inline(always)]
fn exp_nonpositive(xs: &mut [f64]) {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = f64::from_bits(0x3fe6_2e42_fee0_0000);
    const LN2_LO: f64 = f64::from_bits(0x3dea_39ef_3579_3c76);
    const ROUND: f64 = 6_755_399_441_055_744.0;
    // Taylor coefficients 1/k! for k = 2..=13.
    const C: [f64; 12] = [
        1.0 / 2.0,
        1.0 / 6.0,
        1.0 / 24.0,
        1.0 / 120.0,
        1.0 / 720.0,
        1.0 / 5040.0,
        1.0 / 40320.0,
        1.0 / 362880.0,
        1.0 / 3628800.0,
        1.0 / 39916800.0,
        1.0 / 479001600.0,
        1.0 / 6227020800.0,
    ];
    for x in xs.iter_mut() {
        let v = if *x < -700.0 { -700.0 } else { *x };
        let t = v * LOG2E + ROUND;
        let kf = t - ROUND;
        let r = (v - kf * LN2_HI) - kf * LN2_LO;
        let mut p = C[11];
        for &c in C[..11].iter().rev() {
            p = p * r + c;
        }
        let e = 1.0 + r + r * r * p;
        // The low mantissa bits of `t` hold k, so shifting them into the
        // exponent field builds 2^k.
        let scale = f64::from_bits((t.to_bits() << 52).wrapping_add(1023 << 52));
        *x = if *x < -700.0 { 0.0 } else { e * scale };
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvmModel {
    pub kernel: SvmKernel,
    dim: usize,
    /// Support vectors stored row-major.
    sv: Vec<f64>,
    /// `alpha_i * y_i` for each support vector.
    pub dual_coeffs: Vec<f64>,
    pub bias: f64,
    pub regularization_c: f64,
    /// Primal weights, only for the linear kernel.
    weights: Option<Vec<f64>>,
    pub training_accuracy: f64,
    /// False when the iteration cap was hit before the KKT tolerance was met.
    pub converged: bool,
    pub iterations: usize,
}

impl SvmModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_support_vectors(&self) -> usize {
        self.dual_coeffs.len()
    }

    pub fn support_vectors(&self) -> impl Iterator<Item = &[f64]> {
        self.sv.chunks_exact(self.dim.max(1))
    }

    /// Signed decision value; positive means the `+1` class.
    pub fn decision(&self, x: &[f64]) -> f64 {
        if let Some(w) = &self.weights {
            return dot(w, x) + self.bias;
        }
        let mut acc = self.bias;
        match self.kernel {
            SvmKernel::Rbf { gamma } => {
                for (sv, c) in self.sv.chunks_exact(self.dim).zip(&self.dual_coeffs) {
                    let mut d2 = 0.0;
                    for (a, b) in sv.iter().zip(x) {
                        let t = a - b;
                        d2 += t * t;
                    }
                    acc += c * (-gamma * d2).exp();
                }
            }
            kernel => {
                for (sv, c) in self.sv.chunks_exact(self.dim).zip(&self.dual_coeffs) {
                    acc += c * kernel.eval(sv, x);
                }
            }
        }
        acc
    }

    /// Decision values for many points at once, through one matrix product,
    /// together with a per-point bound on their rounding error relative to
    /// [`SvmModel::decision`].
    pub(crate) fn decision_batch(&self, points: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
        let m = points.len();
        if let Some(w) = &self.weights {
            let d: Vec<f64> = points.iter().map(|x| dot(w, x) + self.bias).collect();
            return (d, vec![0.0; m]);
        }
        let s = self.dual_coeffs.len();
        let x = DMatrix::from_fn(m, self.dim, |i, k| points[i][k]);
        // Support vectors are stored row by row, which is `sv_t` column-major.
        let sv_t = DMatrix::from_column_slice(self.dim, s, &self.sv);
        let mut g = &x * &sv_t;
        let mut values = vec![self.bias; m];
        let mut bound = vec![self.bias.abs(); m];
        match self.kernel {
            SvmKernel::Rbf { gamma } => {
                let xn: Vec<f64> = points.iter().map(|p| dot(p, p)).collect();
                let sn: Vec<f64> = sv_t.column_iter().map(|c| c.norm_squared()).collect();
                let mut acc = RbfTerms {
                    gram: g.as_mut_slice(),
                    xn: &xn,
                    sn: &sn,
                    gamma,
                    coeffs: &self.dual_coeffs,
                    values: &mut values,
                    bound: &mut bound,
                };
                acc.run();
            }
            kernel => {
                if let SvmKernel::Polynomial {
                    degree,
                    gamma,
                    coef0,
                } = kernel
                {
                    g.apply(|v| *v = (gamma * *v + coef0).powi(degree as i32));
                }
                for (j, c) in self.dual_coeffs.iter().enumerate() {
                    for i in 0..m {
                        let t = c * g[(i, j)];
                        values[i] += t;
                        bound[i] += t.abs();
                    }
                }
            }
        }
        let coef_abs: f64 = self.dual_coeffs.iter().map(|c| c.abs()).sum();
        let bound = bound
            .iter()
            .map(|b| (1e-9 + EXP_REL_ERR) * b + 1e-12 * coef_abs)
            .collect();
        (values, bound)
    }

    /// Upper bound on the gradient norm of the decision function, when one is
    /// cheap to state. None for the polynomial kernel.
    pub(crate) fn lipschitz(&self) -> Option<f64> {
        if let Some(w) = &self.weights {
            return Some(dot(w, w).sqrt());
        }
        let coef_abs: f64 = self.dual_coeffs.iter().map(|c| c.abs()).sum();
        match self.kernel {
            // max over r of 2 g r exp(-g r^2) is sqrt(2g/e)
            SvmKernel::Rbf { gamma } => Some(coef_abs * (2.0 * gamma / std::f64::consts::E).sqrt()),
            _ => None,
        }
    }

    /// Builds a model directly from primal weights. Mostly useful in tests.
    pub fn linear(weights: Vec<f64>, bias: f64) -> Self {
        Self {
            kernel: SvmKernel::Linear,
            dim: weights.len(),
            sv: Vec::new(),
            dual_coeffs: Vec::new(),
            bias,
            regularization_c: f64::INFINITY,
            weights: Some(weights),
            training_accuracy: 1.0,
            converged: true,
            iterations: 0,
        }
    }
}

/// Trains a soft-margin SVM. `labels[i] == true` marks the `+1` class.
pub fn train_svm(
    points: &[&[f64]],
    labels: &[bool],
    choice: KernelChoice,
    c: f64,
) -> Result<SvmModel> {
    let n = points.len();
    if n < 2 || labels.len() != n {
        return Err(Error::SplitDegenerate(format!(
            "svm needs at least 2 labeled points, got {n} points and {} labels",
            labels.len()
        )));
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SplitDegenerate(
            "svm training data has a single class".into(),
        ));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!(
            "svm regularization must be positive, got {c}"
        )));
    }
    let dim = points[0].len();
    let kernel = SvmKernel::resolve(choice, points);
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 }).collect();

    // Full Q matrix: Q_ij = y_i y_j K(x_i, x_j).
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = y[i] * y[j] * kernel.eval(points[i], points[j]);
            q[i * n + j] = v;
            q[j * n + i] = v;
        }
    }
    let qd: Vec<f64> = (0..n).map(|i| q[i * n + i]).collect();

    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let max_iter = 10 * n;
    let mut iterations = 0;
    let mut converged = false;

    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    while iterations < max_iter {
        // Working set selection.
        let mut gmax = f64::NEG_INFINITY;
        let mut gmax2 = f64::NEG_INFINITY;
        let mut i_sel = None;
        for t in 0..n {
            if y[t] > 0.0 {
                if !upper(alpha[t]) && -grad[t] >= gmax {
                    gmax = -grad[t];
                    i_sel = Some(t);
                }
            } else if !lower(alpha[t]) && grad[t] >= gmax {
                gmax = grad[t];
                i_sel = Some(t);
            }
        }
        let Some(i) = i_sel else {
            converged = true;
            break;
        };
        let q_i = &q[i * n..(i + 1) * n];
        let mut j_sel = None;
        let mut obj_min = f64::INFINITY;
        for t in 0..n {
            if y[t] > 0.0 {
                if !lower(alpha[t]) {
                    let grad_diff = gmax + grad[t];
                    gmax2 = gmax2.max(grad[t]);
                    if grad_diff > 0.0 {
                        let quad = qd[i] + qd[t] - 2.0 * y[i] * q_i[t];
                        let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                        if obj <= obj_min {
                            obj_min = obj;
                            j_sel = Some(t);
                        }
                    }
                }
            } else if !upper(alpha[t]) {
                let grad_diff = gmax - grad[t];
                gmax2 = gmax2.max(-grad[t]);
                if grad_diff > 0.0 {
                    let quad = qd[i] + qd[t] + 2.0 * y[i] * q_i[t];
                    let obj = -(grad_diff * grad_diff) / if quad > 0.0 { quad } else { TAU };
                    if obj <= obj_min {
                        obj_min = obj;
                        j_sel = Some(t);
                    }
                }
            }
        }
        if gmax + gmax2 < KKT_TOLERANCE {
            converged = true;
            break;
        }
        let Some(j) = j_sel else {
            converged = true;
            break;
        };
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = q_i[j];
        if y[i] != y[j] {
            let quad = (qd[i] + qd[j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            // Equal box constraints on both sides, so the libsvm branch on
            // `diff > C_i - C_j` reduces to `diff > 0`.
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (qd[i] + qd[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }

        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        let q_j = &q[j * n..(j + 1) * n];
        for t in 0..n {
            grad[t] += q_i[t] * di + q_j[t] * dj;
        }
    }

    // Offset from free vectors, or the midpoint of the feasible interval.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut nr_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            nr_free += 1;
            sum_free += yg;
        }
    }
    let rho = if nr_free > 0 {
        sum_free / nr_free as f64
    } else {
        (ub + lb) / 2.0
    };

    let mut sv = Vec::new();
    let mut dual_coeffs = Vec::new();
    for t in 0..n {
        if alpha[t] > 0.0 {
            sv.extend_from_slice(points[t]);
            dual_coeffs.push(alpha[t] * y[t]);
        }
    }
    let weights = matches!(kernel, SvmKernel::Linear).then(|| {
        let mut w = vec![0.0; dim];
        for (row, coef) in sv.chunks_exact(dim).zip(&dual_coeffs) {
            for (wk, xk) in w.iter_mut().zip(row) {
                *wk += coef * xk;
            }
        }
        w
    });

    let mut model = SvmModel {
        kernel,
        dim,
        sv,
        dual_coeffs,
        bias: -rho,
        regularization_c: c,
        weights,
        training_accuracy: 0.0,
        converged,
        iterations,
    };
    let correct = points
        .iter()
        .zip(labels)
        .filter(|(p, &l)| (model.decision(p) >= 0.0) == l)
        .count();
    model.training_accuracy = correct as f64 / n as f64;
    Ok(model)
}
