//! Black-box optimization by learned space partitioning.
//!
//! The search space is split recursively by *latent actions*: each tree node
//! clusters its samples into a good and a bad group on `[x, f(x)]` and trains
//! an SVM on `x` to generalize that split. A UCB descent picks a leaf, and a
//! local optimizer (a trust-region method or plain Bayesian optimization)
//! samples inside the region carved out by the classifiers on that path.

pub mod domain;
pub mod error;
pub mod gp;
pub mod lamcts;
pub mod objectives;
pub mod partition;
pub mod rng;
pub mod sampling;
pub mod tree;
pub mod turbo;

pub use domain::{best_so_far, evaluate, Bounds, Dataset, Evaluation, Mode, Objective, Point};
pub use error::{Error, Result};
