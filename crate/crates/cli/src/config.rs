//! Experiment configuration and the mapping from flags onto it.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lamcts::lamcts::{LamctsConfig, Sampler};
use lamcts::objectives::Benchmark;
use lamcts::partition::KernelChoice;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LamctsTurbo,
    LamctsBo,
    Turbo,
    Bo,
    Random,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::LamctsTurbo,
        Method::LamctsBo,
        Method::Turbo,
        Method::Bo,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LamctsTurbo => "lamcts-turbo",
            Method::LamctsBo => "lamcts-bo",
            Method::Turbo => "turbo",
            Method::Bo => "bo",
            Method::Random => "random",
        }
    }

    /// True for the tree-based methods, which also write iteration traces.
    pub fn uses_tree(self) -> bool {
        matches!(self, Method::LamctsTurbo | Method::LamctsBo)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
                CliError::Usage(format!(
                    "method: unknown method '{s}' (valid: {})",
                    names.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub objective: String,
    pub dim: usize,
    pub method: Method,
    pub repeats: usize,
    /// Repeat `i` runs with seed `seed + i`.
    pub seed: u64,
    pub out: PathBuf,
    /// Optimizer settings. `eval_budget` is the per-repeat budget; the seed
    /// field is overwritten for each repeat.
    pub optimizer: LamctsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            objective: "ackley".into(),
            dim: 20,
            method: Method::LamctsTurbo,
            repeats: 1,
            seed: 0,
            out: PathBuf::from("runs"),
            optimizer: LamctsConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn budget(&self) -> usize {
        self.optimizer.eval_budget
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::json(path, e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn benchmark(&self) -> Result<Benchmark> {
        Benchmark::new(&self.objective, self.dim).map_err(|e| match e {
            lamcts::Error::Config(msg) => CliError::Usage(format!("objective: {msg}")),
            other => CliError::Usage(format!("dim: {other}")),
        })
    }

    /// Optimizer settings for one repeat.
    pub fn optimizer_for(&self, seed: u64) -> LamctsConfig {
        let mut cfg = self.optimizer.clone();
        cfg.seed = seed;
        match self.method {
            Method::LamctsTurbo => cfg.sampler = Sampler::Turbo,
            Method::LamctsBo => cfg.sampler = Sampler::Bo,
            _ => {}
        }
        cfg
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|i| self.seed + i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(CliError::Usage("repeats: must be at least 1".into()));
        }
        if self.seed.checked_add(self.repeats as u64).is_none() {
            return Err(CliError::Usage("seed: seed + repeats overflows".into()));
        }
        if self.budget() == 0 {
            return Err(CliError::Usage("budget: must be at least 1".into()));
        }
        self.benchmark()?;
        if self.method.uses_tree() {
            self.optimizer
                .validate()
                .map_err(|e| CliError::Usage(field_message(&e)))?;
        }
        Ok(())
    }
}

/// Maps an optimizer config error onto the flag or field it came from.
fn field_message(e: &lamcts::Error) -> String {
    let msg = match e {
        lamcts::Error::Config(m) => m.clone(),
        other => other.to_string(),
    };
    let field = ["eval_budget", "theta", "cp", "svm_c", "n_init"]
        .into_iter()
        .find(|f| msg.starts_with(f))
        .map(|f| if f == "eval_budget" { "budget" } else { f })
        .unwrap_or("optimizer");
    format!("{field}: {msg}")
}

/// Values given on the command line; each one that is set replaces the
/// corresponding config field.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub objective: Option<String>,
    pub dim: Option<usize>,
    pub method: Option<Method>,
    pub budget: Option<usize>,
    pub repeats: Option<usize>,
    pub seed: Option<u64>,
    pub cp: Option<f64>,
    pub theta: Option<usize>,
    pub kernel: Option<KernelChoice>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(self, cfg: &mut ExperimentConfig) {
        if let Some(v) = self.objective {
            cfg.objective = v;
        }
        if let Some(v) = self.dim {
            cfg.dim = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.budget {
            cfg.optimizer.eval_budget = v;
        }
        if let Some(v) = self.repeats {
            cfg.repeats = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.cp {
            cfg.optimizer.cp = v;
        }
        if let Some(v) = self.theta {
            cfg.optimizer.theta = v;
        }
        if let Some(v) = self.kernel {
            cfg.optimizer.svm_kernel = v;
        }
        if let Some(v) = self.out {
            cfg.out = v;
        }
    }
}
