//! Library results checked against independent reference computations.

use lamcts::domain::{Bounds, Evaluation, Point};
use lamcts::gp::kernel::{
    covariance, log_marginal_likelihood, log_marginal_likelihood_grad, KernelParams,
};
use lamcts::gp::{expected_improvement, GpModel};
use lamcts::objectives::BenchmarkKind;
use lamcts::partition::kmeans::kmeans2;
use lamcts::partition::svm::{train_svm, KernelChoice};
use lamcts::partition::Side;
use lamcts::sampling::Sobol;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn inverse3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c =
        |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det: f64 = (0..3).map(|j| m[0][j] * cof[0][j]).sum();
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = cof[j][i] / det;
        }
    }
    inv
}

#[test]
fn gp_posterior_matches_dense_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bounds = Bounds::uniform(2, 0.0, 1.0).unwrap();
    for _ in 0..50 {
        let x: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.random(), rng.random()]).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
        let params = KernelParams::new(
            vec![rng.random_range(0.2..1.5), rng.random_range(0.2..1.5)],
            rng.random_range(0.5..2.0),
            rng.random_range(1e-3..1e-1),
        );
        let model = GpModel::with_params(&x, &y, &bounds, params.clone()).unwrap();
        assert_eq!(model.jitter(), 0.0);

        let mean = y.iter().sum::<f64>() / 3.0;
        let std = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        let ys: Vec<f64> = y.iter().map(|v| (v - mean) / std).collect();
        let mut k = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                k[i][j] = covariance(&x[i], &x[j], &params);
            }
            k[i][i] += params.noise_variance;
        }
        let kinv = inverse3(k);

        for _ in 0..5 {
            let q = vec![rng.random::<f64>(), rng.random::<f64>()];
            let ks: Vec<f64> = x.iter().map(|xi| covariance(&q, xi, &params)).collect();
            let w: Vec<f64> = (0..3)
                .map(|i| (0..3).map(|j| kinv[i][j] * ks[j]).sum())
                .collect();
            let want_mean = mean + std * (0..3).map(|i| w[i] * ys[i]).sum::<f64>();
            let want_var =
                std * std * (params.signal_variance - (0..3).map(|i| w[i] * ks[i]).sum::<f64>());
            let (m, v) = model.predict(&q);
            assert!((m - want_mean).abs() <= 1e-8, "mean {m} vs {want_mean}");
            assert!((v - want_var).abs() <= 1e-8, "variance {v} vs {want_var}");
        }
    }
}

#[test]
fn lml_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let d = 1 + trial % 4;
        let n = 5 + trial % 7;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random()).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|p| p.iter().map(|v| (3.0 * v).sin()).sum::<f64>() + 0.1 * rng.random::<f64>())
            .collect();
        let params = KernelParams::new(
            (0..d).map(|_| rng.random_range(0.2..1.0)).collect(),
            rng.random_range(0.5..2.0),
            rng.random_range(1e-3..1e-1),
        );
        let (_, grad) = log_marginal_likelihood_grad(&x, &y, &params).unwrap();
        let theta = params.to_log();
        let h = 1e-5;
        for k in 0..theta.len() {
            let mut up = theta.clone();
            up[k] += h;
            let mut down = theta.clone();
            down[k] -= h;
            let fd = (log_marginal_likelihood(&x, &y, &KernelParams::from_log(&up)).unwrap()
                - log_marginal_likelihood(&x, &y, &KernelParams::from_log(&down)).unwrap())
                / (2.0 * h);
            let rel = (grad[k] - fd).abs() / fd.abs().max(1e-3);
            assert!(
                rel <= 1e-4,
                "trial {trial} param {k}: analytic {} vs fd {fd}",
                grad[k]
            );
        }
    }
}

#[test]
fn ei_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (mean, var, best) in [
        (0.0, 1.0, 0.0),
        (0.5, 0.25, 1.0),
        (-1.0, 4.0, 0.3),
        (2.0, 0.5, 1.0),
    ] {
        let normal = Normal::new(mean, f64::sqrt(var)).unwrap();
        let draws = 1_000_000;
        let mc = (0..draws)
            .map(|_| (normal.sample(&mut rng) - best).max(0.0))
            .sum::<f64>()
            / draws as f64;
        let ei = expected_improvement(mean, var, best);
        assert!((ei - mc).abs() <= 2e-3, "ei {ei} vs mc {mc}");
    }
}

#[test]
fn sobol_one_d_prefix() {
    let mut s = Sobol::new(1).unwrap();
    let prefix: Vec<f64> = (0..3).map(|_| s.next_point()[0]).collect();
    assert_eq!(prefix, vec![0.5, 0.75, 0.25]);
}

fn evals(rows: &[(Vec<f64>, f64)]) -> Vec<Evaluation> {
    rows.iter()
        .enumerate()
        .map(|(i, (x, r))| Evaluation {
            point: Point::new(x.clone()).unwrap(),
            value: -r,
            reward: *r,
            index: i,
        })
        .collect()
}

/// Within-cluster sum of squares over z-scored `[x, reward]` rows.
fn sse(rows: &[Vec<f64>], mask: &[bool]) -> f64 {
    let mut total = 0.0;
    for side in [true, false] {
        let members: Vec<&Vec<f64>> = rows
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m == side)
            .map(|(r, _)| r)
            .collect();
        let w = rows[0].len();
        let c: Vec<f64> = (0..w)
            .map(|k| members.iter().map(|r| r[k]).sum::<f64>() / members.len() as f64)
            .collect();
        total += members
            .iter()
            .map(|r| r.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum::<f64>();
    }
    total
}

fn zscore(samples: &[Evaluation]) -> Vec<Vec<f64>> {
    let raw: Vec<Vec<f64>> = samples
        .iter()
        .map(|e| e.point.iter().copied().chain([e.reward]).collect())
        .collect();
    let n = raw.len() as f64;
    let w = raw[0].len();
    let mean: Vec<f64> = (0..w)
        .map(|k| raw.iter().map(|r| r[k]).sum::<f64>() / n)
        .collect();
    let sd: Vec<f64> = (0..w)
        .map(|k| {
            let s = (raw.iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n).sqrt();
            if s > 1e-12 {
                s
            } else {
                1.0
            }
        })
        .collect();
    raw.iter()
        .map(|r| (0..w).map(|k| (r[k] - mean[k]) / sd[k]).collect())
        .collect()
}

#[test]
fn kmeans_matches_brute_force_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for trial in 0..300 {
        let n = 2 + trial % 11;
        let d = 1 + trial % 3;
        let rows: Vec<(Vec<f64>, f64)> = (0..n)
            .map(|_| {
                (
                    (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
                    rng.random_range(-5.0..5.0),
                )
            })
            .collect();
        let samples = evals(&rows);
        let refs: Vec<&Evaluation> = samples.iter().collect();
        let got = kmeans2(&refs).unwrap();
        let z = zscore(&samples);
        let mask: Vec<bool> = got.labels.iter().map(|s| *s == Side::Good).collect();
        let got_sse = sse(&z, &mask);

        let mut best = f64::INFINITY;
        // Subsets containing sample 0, excluding the full set.
        for bits in 0..(1u32 << (n - 1)) - 1 {
            let m: Vec<bool> = (0..n).map(|i| i == 0 || bits >> (i - 1) & 1 == 1).collect();
            best = best.min(sse(&z, &m));
        }
        assert!(
            got_sse <= best * (1.0 + 1e-9) + 1e-12,
            "trial {trial}: {got_sse} vs {best}"
        );
    }
}

#[test]
fn svm_separates_constructed_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..30 {
        let d = 1 + trial % 5;
        let mut w: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        w.iter_mut().for_each(|v| *v /= norm);
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        while pts.len() < 40 {
            let p: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s: f64 = p.iter().zip(&w).map(|(a, b)| a * b).sum();
            // Keep a margin so the set is separable with room to spare.
            if s.abs() > 0.2 {
                labels.push(s > 0.0);
                pts.push(p);
            }
        }
        if labels.iter().all(|l| *l) || labels.iter().all(|l| !*l) {
            continue;
        }
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        for kernel in [KernelChoice::Linear, KernelChoice::Rbf] {
            let m = train_svm(&refs, &labels, kernel, 1e3).unwrap();
            assert_eq!(m.training_accuracy, 1.0, "trial {trial} {kernel}");
        }
    }
    // XOR corners need a non-linear kernel.
    let xor = [[-1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [1.0, -1.0]];
    let refs: Vec<&[f64]> = xor.iter().map(|p| p.as_slice()).collect();
    let m = train_svm(&refs, &[true, true, false, false], KernelChoice::Rbf, 10.0).unwrap();
    assert_eq!(m.training_accuracy, 1.0);
}

#[test]
fn benchmark_optima() {
    for kind in BenchmarkKind::ALL {
        for dim in [kind.min_dim(), 10, 20] {
            let v = kind.eval(&kind.optimizer(dim));
            assert!(v.abs() <= 1e-12, "{kind} d={dim}: {v}");
        }
    }
}
