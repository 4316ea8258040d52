//! Latent actions: a learned good/bad split of a set of evaluated samples.
//!
//! Samples are clustered on standardized `[x, reward]` features, then an SVM
//! over the raw coordinates generalizes the cluster labels to the whole
//! search space. The SVM, not the clustering, decides which child each sample
//! lands in.

pub mod kmeans;
pub mod svm;

use serde::{Deserialize, Serialize};

pub use kmeans::{kmeans2, ClusterLabels, FeatureScaler};
pub use svm::{train_svm, KernelChoice, SvmKernel, SvmModel};

use crate::domain::Evaluation;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Good,
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentAction {
    pub model: SvmModel,
    pub good_side: Sign,
}

impl LatentAction {
    /// Side of `x`. A decision value of exactly zero counts as good.
    pub fn classify(&self, x: &[f64]) -> Side {
        self.side_of(self.model.decision(x))
    }

    /// Same result as calling [`LatentAction::classify`] on every point.
    pub fn classify_many(&self, points: &[&[f64]]) -> Vec<Side> {
        let (values, bounds) = self.model.decision_batch(points);
        points
            .iter()
            .zip(values.iter().zip(&bounds))
            .map(|(x, (v, b))| {
                if v.abs() <= *b {
                    self.classify(x)
                } else {
                    self.side_of(*v)
                }
            })
            .collect()
    }

    /// Side of `x` together with a radius around `x` inside which every point
    /// is guaranteed to classify the same way. The radius is 0 when no bound
    /// is available.
    pub(crate) fn stable_ball(&self, x: &[f64]) -> (Side, f64) {
        let side = self.classify(x);
        let Some(lip) = self.model.lipschitz() else {
            return (side, 0.0);
        };
        let (v, b) = self.model.decision_batch(&[x]);
        let slack = v[0].abs() - 2.0 * b[0];
        if slack <= 0.0 || lip <= 0.0 {
            return (
                side,
                if lip <= 0.0 && slack > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                },
            );
        }
        (side, slack / lip * (1.0 - 1e-9))
    }

    fn side_of(&self, d: f64) -> Side {
        if d == 0.0 {
            return Side::Good;
        }
        match (d > 0.0, self.good_side) {
            (true, Sign::Positive) | (false, Sign::Negative) => Side::Good,
            _ => Side::Bad,
        }
    }

    pub fn training_accuracy(&self) -> f64 {
        self.model.training_accuracy
    }
}

pub fn classify(action: &LatentAction, x: &[f64]) -> Side {
    action.classify(x)
}

/// Result of splitting a sample set. Subsets hold positions into the input
/// slice.
#[derive(Debug, Clone)]
pub struct Split {
    pub action: LatentAction,
    pub good: Vec<usize>,
    pub bad: Vec<usize>,
    pub cluster_labels: ClusterLabels,
}

pub fn learn_latent_action(samples: &[&Evaluation], kernel: KernelChoice, c: f64) -> Result<Split> {
    if samples.len() < 2 {
        return Err(Error::SplitDegenerate(format!(
            "need at least 2 samples to split, got {}",
            samples.len()
        )));
    }
    let cluster_labels = kmeans2(samples)?;
    let points: Vec<&[f64]> = samples.iter().map(|e| e.point.as_slice()).collect();
    let labels: Vec<bool> = cluster_labels
        .labels
        .iter()
        .map(|s| *s == Side::Good)
        .collect();
    let model = train_svm(&points, &labels, kernel, c)?;
    let action = LatentAction {
        model,
        good_side: Sign::Positive,
    };

    let (mut good, mut bad) = (Vec::new(), Vec::new());
    for (i, p) in points.iter().enumerate() {
        match action.classify(p) {
            Side::Good => good.push(i),
            Side::Bad => bad.push(i),
        }
    }
    if good.is_empty() || bad.is_empty() {
        return Err(Error::SplitDegenerate(
            "classifier puts every sample on one side".into(),
        ));
    }
    Ok(Split {
        action,
        good,
        bad,
        cluster_labels,
    })
}
