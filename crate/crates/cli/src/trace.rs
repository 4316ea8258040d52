//! CSV trace files: one file of evaluation rows and one of iteration rows
//! per repeat.

use std::path::{Path, PathBuf};

use lamcts::lamcts::{EvalRecord, IterationRecord, RunTrace};

use crate::error::{CliError, Result};

pub const EVAL_HEADER: [&str; 3] = ["index", "value", "best_value"];
pub const ITERATION_HEADER: [&str; 5] = [
    "iteration",
    "tree_depth",
    "num_splits",
    "leaf_mean",
    "leaf_size",
];

/// Names of the two trace files for one repeat, relative to the output
/// directory.
pub fn trace_names(prefix: &str, seed: u64) -> (String, String) {
    (
        format!("{prefix}-s{seed}.evals.csv"),
        format!("{prefix}-s{seed}.iterations.csv"),
    )
}

pub fn write_evals(path: &Path, rows: &[EvalRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    w.write_record(EVAL_HEADER)
        .map_err(|e| CliError::csv(path, e))?;
    for r in rows {
        w.write_record([
            r.index.to_string(),
            r.value.to_string(),
            r.best_value.to_string(),
        ])
        .map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_iterations(path: &Path, rows: &[IterationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
    w.write_record(ITERATION_HEADER)
        .map_err(|e| CliError::csv(path, e))?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.tree_depth.to_string(),
            r.num_splits.to_string(),
            r.leaf_mean.to_string(),
            r.leaf_size.to_string(),
        ])
        .map_err(|e| CliError::csv(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Writes both files and returns their paths.
pub fn write_trace(
    dir: &Path,
    prefix: &str,
    seed: u64,
    trace: &RunTrace,
) -> Result<(PathBuf, PathBuf)> {
    let (evals, iters) = trace_names(prefix, seed);
    let (evals, iters) = (dir.join(evals), dir.join(iters));
    write_evals(&evals, &trace.evaluations)?;
    write_iterations(&iters, &trace.iterations)?;
    Ok((evals, iters))
}

fn check_header(path: &Path, rdr: &mut csv::Reader<std::fs::File>, want: &[&str]) -> Result<()> {
    let got = rdr.headers().map_err(|e| CliError::csv(path, e))?;
    if got.iter().ne(want.iter().copied()) {
        return Err(CliError::Verify(format!(
            "{}: header is '{}', expected '{}'",
            path.display(),
            got.iter().collect::<Vec<_>>().join(","),
            want.join(",")
        )));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| {
        CliError::Verify(format!(
            "{}: row {line}: cannot parse '{raw}'",
            path.display()
        ))
    })
}

pub fn read_evals(path: &Path) -> Result<Vec<EvalRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    check_header(path, &mut rdr, &EVAL_HEADER)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        rows.push(EvalRecord {
            index: field(path, i + 1, &rec[0])?,
            value: field(path, i + 1, &rec[1])?,
            best_value: field(path, i + 1, &rec[2])?,
        });
    }
    Ok(rows)
}

/// Iteration rows as written; only the CSV columns are recovered.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub iteration: usize,
    pub tree_depth: usize,
    pub num_splits: usize,
    pub leaf_mean: f64,
    pub leaf_size: usize,
}

pub fn read_iterations(path: &Path) -> Result<Vec<IterationRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))?;
    check_header(path, &mut rdr, &ITERATION_HEADER)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        rows.push(IterationRow {
            iteration: field(path, i + 1, &rec[0])?,
            tree_depth: field(path, i + 1, &rec[1])?,
            num_splits: field(path, i + 1, &rec[2])?,
            leaf_mean: field(path, i + 1, &rec[3])?,
            leaf_size: field(path, i + 1, &rec[4])?,
        });
    }
    Ok(rows)
}
