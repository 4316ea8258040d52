//! Two-means clustering on standardized `[x, reward]` features.

use serde::{Deserialize, Serialize};

use super::Side;
use crate::domain::Evaluation;
use crate::error::{Error, Result};

const MAX_ITERATIONS: usize = 100;

/// Per-column z-scoring. Constant columns get a unit standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let width = rows.first().map_or(0, Vec::len);
        let n = rows.len() as f64;
        let mut mean = vec![0.0; width];
        for row in rows {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = vec![0.0; width];
        for row in rows {
            for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        for s in std.iter_mut() {
            *s = (*s / n).sqrt();
            if !(*s > 1e-12 && s.is_finite()) {
                *s = 1.0;
            }
        }
        Self { mean, std }
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterLabels {
    pub labels: Vec<Side>,
    pub good_mean_reward: f64,
    pub bad_mean_reward: f64,
}

/// Raw Lloyd output: cluster index per row plus the SSE after every
/// assignment step.
#[derive(Debug, Clone)]
pub struct LloydResult {
    pub assignment: Vec<usize>,
    pub sse_history: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn centroids(rows: &[Vec<f64>], assignment: &[usize]) -> Option<[Vec<f64>; 2]> {
    let width = rows[0].len();
    let mut sums = [vec![0.0; width], vec![0.0; width]];
    let mut counts = [0usize; 2];
    for (row, &c) in rows.iter().zip(assignment) {
        counts[c] += 1;
        for (s, v) in sums[c].iter_mut().zip(row) {
            *s += v;
        }
    }
    if counts.contains(&0) {
        return None;
    }
    for (sum, count) in sums.iter_mut().zip(counts) {
        sum.iter_mut().for_each(|s| *s /= count as f64);
    }
    Some(sums)
}

fn sse(rows: &[Vec<f64>], assignment: &[usize], centers: &[Vec<f64>; 2]) -> f64 {
    rows.iter()
        .zip(assignment)
        .map(|(r, &c)| sq_dist(r, &centers[c]))
        .sum()
}

fn assign(rows: &[Vec<f64>], centers: &[Vec<f64>; 2]) -> Vec<usize> {
    rows.iter()
        .map(|r| usize::from(sq_dist(r, &centers[1]) < sq_dist(r, &centers[0])))
        .collect()
}

fn farthest_pair(rows: &[Vec<f64>]) -> (usize, usize, f64) {
    let (mut a, mut b, mut far) = (0, 0, 0.0);
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            let d = sq_dist(&rows[i], &rows[j]);
            if d > far {
                (a, b, far) = (i, j, d);
            }
        }
    }
    (a, b, far)
}

fn check_rows(rows: &[Vec<f64>]) -> Result<(usize, usize)> {
    if rows.len() < 2 {
        return Err(Error::SplitDegenerate(format!(
            "k-means needs at least 2 samples, got {}",
            rows.len()
        )));
    }
    let (a, b, far) = farthest_pair(rows);
    if far == 0.0 {
        return Err(Error::SplitDegenerate(
            "all feature vectors are identical".into(),
        ));
    }
    Ok((a, b))
}

/// Lloyd's algorithm with k = 2 seeded by the farthest pair of rows.
pub fn lloyd2(rows: &[Vec<f64>]) -> Result<LloydResult> {
    let (a, b) = check_rows(rows)?;
    Ok(lloyd2_from(rows, a, b))
}

/// Lloyd's algorithm with k = 2 seeded by rows `a` and `b`.
pub fn lloyd2_from(rows: &[Vec<f64>], a: usize, b: usize) -> LloydResult {
    let mut assignment = assign(rows, &[rows[a].clone(), rows[b].clone()]);
    let mut sse_history = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let Some(centers) = centroids(rows, &assignment) else {
            break;
        };
        sse_history.push(sse(rows, &assignment, &centers));
        let next = assign(rows, &centers);
        if next == assignment || centroids(rows, &next).is_none() {
            break;
        }
        assignment = next;
    }
    LloydResult {
        assignment,
        sse_history,
        iterations,
    }
}

/// Single-point moves that lower the SSE once centroid shifts are taken into
/// account. Never empties a cluster.
fn hartigan(rows: &[Vec<f64>], assignment: &mut [usize]) {
    let width = rows[0].len();
    let mut sums = [vec![0.0; width], vec![0.0; width]];
    let mut counts = [0usize; 2];
    for (row, &c) in rows.iter().zip(assignment.iter()) {
        counts[c] += 1;
        sums[c].iter_mut().zip(row).for_each(|(s, v)| *s += v);
    }
    for _ in 0..MAX_ITERATIONS {
        let mut moved = false;
        for (i, row) in rows.iter().enumerate() {
            let from = assignment[i];
            let to = 1 - from;
            let (nf, nt) = (counts[from] as f64, counts[to] as f64);
            if counts[from] <= 1 {
                continue;
            }
            let df: f64 = row
                .iter()
                .zip(&sums[from])
                .map(|(v, s)| (v - s / nf).powi(2))
                .sum();
            let dt: f64 = row
                .iter()
                .zip(&sums[to])
                .map(|(v, s)| (v - s / nt).powi(2))
                .sum();
            if nt / (nt + 1.0) * dt - nf / (nf - 1.0) * df < -1e-12 {
                for k in 0..width {
                    sums[from][k] -= row[k];
                    sums[to][k] += row[k];
                }
                counts[from] -= 1;
                counts[to] += 1;
                assignment[i] = to;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
}

fn total_sse(rows: &[Vec<f64>], assignment: &[usize]) -> f64 {
    centroids(rows, assignment).map_or(f64::INFINITY, |c| sse(rows, assignment, &c))
}

/// Nodes up to this size try every pair of samples as initial centers.
const ALL_PAIRS_LIMIT: usize = 20;
/// Extra starts for larger nodes.
const EXTRA_STARTS: usize = 8;

/// Two-means clustering by several Lloyd runs, each polished with Hartigan
/// moves; the lowest SSE wins and ties go to the earlier start. The
/// farthest pair is always the first start.
pub fn best_two_means(rows: &[Vec<f64>]) -> Result<Vec<usize>> {
    let (a, b) = check_rows(rows)?;
    let n = rows.len();
    let mut starts = vec![(a, b)];
    if n <= ALL_PAIRS_LIMIT {
        for i in 0..n {
            for j in i + 1..n {
                if (i, j) != (a, b) && rows[i] != rows[j] {
                    starts.push((i, j));
                }
            }
        }
    } else {
        for k in 0..EXTRA_STARTS {
            let i = k * n / EXTRA_STARTS;
            let j = (0..n)
                .max_by(|&p, &q| {
                    sq_dist(&rows[i], &rows[p])
                        .total_cmp(&sq_dist(&rows[i], &rows[q]))
                        .then(q.cmp(&p))
                })
                .expect("at least two rows");
            if rows[i] != rows[j] {
                starts.push((i.min(j), i.max(j)));
            }
        }
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for (i, j) in starts {
        let mut assignment = lloyd2_from(rows, i, j).assignment;
        hartigan(rows, &mut assignment);
        let cost = total_sse(rows, &assignment);
        if best.as_ref().is_none_or(|(c, _)| cost < *c - 1e-12) {
            best = Some((cost, assignment));
        }
    }
    Ok(best.expect("farthest-pair start always runs").1)
}

/// Feature rows `[x, reward]` for a set of evaluations.
pub fn features(samples: &[&Evaluation]) -> Vec<Vec<f64>> {
    samples
        .iter()
        .map(|e| {
            let mut row = e.point.to_vec();
            row.push(e.reward);
            row
        })
        .collect()
}

/// Clusters `samples` into a good and a bad group. The group with the higher
/// mean reward is labeled good.
pub fn kmeans2(samples: &[&Evaluation]) -> Result<ClusterLabels> {
    let raw = features(samples);
    let scaler = FeatureScaler::fit(&raw);
    let rows: Vec<Vec<f64>> = raw.iter().map(|r| scaler.transform(r)).collect();
    let assignment = best_two_means(&rows)?;

    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (e, &c) in samples.iter().zip(&assignment) {
        sums[c] += e.reward;
        counts[c] += 1;
    }
    let means = [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64];
    let good = usize::from(means[1] > means[0]);
    let labels = assignment
        .iter()
        .map(|&c| if c == good { Side::Good } else { Side::Bad })
        .collect();
    Ok(ClusterLabels {
        labels,
        good_mean_reward: means[good],
        bad_mean_reward: means[1 - good],
    })
}
