use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn lamcts(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lamcts"))
        .args(args)
        .env("LAMCTS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn run_ok(out: &Path, method: &str) {
    let o = lamcts(&[
        "run",
        "--objective",
        "rastrigin",
        "--dim",
        "3",
        "--method",
        method,
        "--budget",
        "40",
        "--repeats",
        "2",
        "--seed",
        "5",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn run_writes_traces_that_verify() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), "lamcts-bo");
    let evals = fs::read_to_string(dir.path().join("rastrigin-d3-lamcts-bo-s6.evals.csv")).unwrap();
    assert!(evals.starts_with("index,value,best_value\n"));
    assert_eq!(evals.lines().count(), 41);
    let iters =
        fs::read_to_string(dir.path().join("rastrigin-d3-lamcts-bo-s5.iterations.csv")).unwrap();
    assert!(iters.starts_with("iteration,tree_depth,num_splits,leaf_mean,leaf_size\n"));
    assert!(iters.lines().count() > 1);

    let summary = dir.path().join("rastrigin-d3-lamcts-bo.summary.json");
    let o = lamcts(&["verify", summary.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    // A changed trace value no longer matches the summary.
    let path = dir.path().join("rastrigin-d3-lamcts-bo-s5.evals.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let last = lines.len() - 1;
    lines[last] = "39,-1,-1".to_string();
    fs::write(&path, lines.join("\n") + "\n").unwrap();
    let o = lamcts(&["verify", summary.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("verification failed"));
}

#[test]
fn compare_ranks_methods() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(dir.path(), "turbo");
    run_ok(dir.path(), "random");
    let a = dir.path().join("rastrigin-d3-turbo.summary.json");
    let b = dir.path().join("rastrigin-d3-random.summary.json");
    let o = lamcts(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = String::from_utf8(o.stdout).unwrap();
    assert!(
        table.contains("turbo") && table.contains("random") && table.contains("budget 40"),
        "{table}"
    );

    let o = lamcts(&["compare", a.to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn bad_arguments_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for (args, field) in [
        (
            vec!["run", "--objective", "sphere", "--out", out],
            "objective",
        ),
        (vec!["run", "--theta", "1", "--out", out], "theta"),
        (vec!["run", "--cp=-1", "--out", out], "cp"),
        (vec!["run", "--repeats", "0", "--out", out], "repeats"),
        (vec!["run", "--method", "sgd", "--out", out], "method"),
        (vec!["run", "--kernel", "sigmoid", "--out", out], "kernel"),
    ] {
        let o = lamcts(&args);
        assert!(!o.status.success(), "{args:?}");
        let err = String::from_utf8_lossy(&o.stderr);
        assert!(err.contains(field), "{args:?}: {err}");
    }
}

#[test]
fn invalid_thread_count_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_lamcts"))
        .args([
            "run",
            "--method",
            "random",
            "--budget",
            "5",
            "--out",
            dir.path().to_str().unwrap(),
        ])
        .env("LAMCTS_THREADS", "0")
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("LAMCTS_THREADS"));
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    fs::write(
        &cfg,
        r#"{"objective": "levy", "dim": 2, "method": "random", "optimizer": {"eval_budget": 12}}"#,
    )
    .unwrap();
    let out = dir.path().join("o");
    let o = lamcts(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--dim",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let evals = fs::read_to_string(out.join("levy-d3-random-s0.evals.csv")).unwrap();
    assert_eq!(evals.lines().count(), 13);
}
