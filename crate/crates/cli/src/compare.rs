//! Side-by-side comparison of summaries that share objective, dim and budget.

use std::fmt;
use std::path::Path;

use crate::config::Method;
use crate::error::{CliError, Result};
use crate::summary::{Summary, CHECKPOINT_FRACTIONS};

#[derive(Debug, Clone)]
pub struct Comparison {
    pub objective: String,
    pub dim: usize,
    pub budget: usize,
    /// Summaries sorted by final median, best first.
    pub entries: Vec<Summary>,
    /// Ranks by final median (1 is best); equal medians share a rank.
    pub ranks: Vec<usize>,
}

pub fn compare(summaries: Vec<Summary>) -> Result<Comparison> {
    if summaries.len() < 2 {
        return Err(CliError::Comparison(format!(
            "need at least two summaries, got {}",
            summaries.len()
        )));
    }
    let first = &summaries[0];
    for s in &summaries[1..] {
        if s.objective != first.objective || s.dim != first.dim || s.budget != first.budget {
            return Err(CliError::Comparison(format!(
                "{} on {}-d{} with budget {} cannot be compared with {} on {}-d{} with budget {}",
                s.method,
                s.objective,
                s.dim,
                s.budget,
                first.method,
                first.objective,
                first.dim,
                first.budget
            )));
        }
    }
    let mut methods: Vec<Method> = summaries.iter().map(|s| s.method).collect();
    methods.sort();
    if methods.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Comparison(
            "each method may appear only once".into(),
        ));
    }

    let (objective, dim, budget) = (first.objective.clone(), first.dim, first.budget);
    let mut entries = summaries;
    entries.sort_by(|a, b| {
        a.final_median()
            .total_cmp(&b.final_median())
            .then(a.method.cmp(&b.method))
    });
    let mut ranks = Vec::with_capacity(entries.len());
    for (i, s) in entries.iter().enumerate() {
        let tied = i > 0 && s.final_median() == entries[i - 1].final_median();
        ranks.push(if tied { ranks[i - 1] } else { i + 1 });
    }
    Ok(Comparison {
        objective,
        dim,
        budget,
        entries,
        ranks,
    })
}

pub fn compare_files(paths: &[impl AsRef<Path>]) -> Result<Comparison> {
    let summaries = paths
        .iter()
        .map(|p| Summary::load(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    compare(summaries)
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}-d{}, budget {}",
            self.objective, self.dim, self.budget
        )?;
        write!(f, "{:<5} {:<13} {:>7}", "rank", "method", "repeats")?;
        for frac in CHECKPOINT_FRACTIONS {
            write!(f, " {:>22}", format!("median@{:.0}% (IQR)", frac * 100.0))?;
        }
        writeln!(f)?;
        for (rank, s) in self.ranks.iter().zip(&self.entries) {
            let tie = self.ranks.iter().filter(|r| *r == rank).count() > 1;
            let label = if tie {
                format!("{rank}=")
            } else {
                rank.to_string()
            };
            write!(
                f,
                "{:<5} {:<13} {:>7}",
                label,
                s.method.name(),
                s.seeds.len()
            )?;
            for c in &s.checkpoints {
                write!(f, " {:>22}", format!("{:.4e} ({:.2e})", c.median, c.iqr))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summary::Checkpoint;

    fn summary(method: Method, final_median: f64) -> Summary {
        Summary {
            objective: "ackley".into(),
            dim: 2,
            method,
            budget: 10,
            seeds: vec![0],
            checkpoints: vec![Checkpoint {
                fraction: 1.0,
                evaluations: 10,
                median: final_median,
                q1: final_median,
                q3: final_median,
                iqr: 0.0,
            }],
            final_best: vec![final_median],
            eval_traces: vec![],
            iteration_traces: vec![],
        }
    }

    #[test]
    fn ranks_share_ties() {
        let c = compare(vec![
            summary(Method::Random, 3.0),
            summary(Method::Turbo, 1.0),
            summary(Method::Bo, 1.0),
            summary(Method::LamctsBo, 0.5),
        ])
        .unwrap();
        let order: Vec<Method> = c.entries.iter().map(|s| s.method).collect();
        assert_eq!(
            order,
            vec![Method::LamctsBo, Method::Turbo, Method::Bo, Method::Random]
        );
        assert_eq!(c.ranks, vec![1, 2, 2, 4]);
        let table = c.to_string();
        assert!(
            table.contains("2=") && table.lines().count() == 6,
            "{table}"
        );
    }

    #[test]
    fn mismatched_or_single_summaries_are_rejected() {
        assert!(compare(vec![summary(Method::Bo, 1.0)]).is_err());
        let mut other = summary(Method::Turbo, 1.0);
        other.budget = 20;
        let err = compare(vec![summary(Method::Bo, 1.0), other]).unwrap_err();
        assert!(err.to_string().contains("budget 20"));
        assert!(compare(vec![summary(Method::Bo, 1.0), summary(Method::Bo, 2.0)]).is_err());
    }
}
