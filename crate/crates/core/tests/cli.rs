use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_lowrank-mnl");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn collab_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "--setting", "collab", "--d1", "15", "--d2", "12", "--rank", "2", "--alpha", "2", "--seed", "4", "--out", "t.csv"]);
    ok(d, &["sample", "collab", "--theta", "t.csv", "--k", "8", "--seed", "5", "--out", "d.jsonl"]);
    assert_eq!(fs::read_to_string(d.join("d.jsonl")).unwrap().lines().count(), 15);
    let fit = ok(
        d,
        &[
            "fit", "--setting", "collab", "--data", "d.jsonl", "--d1", "15", "--d2", "12", "--lambda", "auto", "--tol",
            "1e-8", "--max-iter", "1000", "--out", "e.csv", "--trace", "trace.csv",
        ],
    );
    assert!(String::from_utf8_lossy(&fit.stderr).contains("converged=true"));
    let trace = fs::read_to_string(d.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "iteration,objective");

    let eval = ok(d, &["eval", "--setting", "collab", "--theta", "t.csv", "--estimate", "e.csv"]);
    let rmse: f64 = String::from_utf8_lossy(&eval.stdout).trim().parse().unwrap();
    assert!(rmse.is_finite() && rmse >= 0.0);
    let self_eval = ok(d, &["eval", "--setting", "collab", "--theta", "t.csv", "--estimate", "t.csv"]);
    assert!(String::from_utf8_lossy(&self_eval.stdout).trim().parse::<f64>().unwrap() < 1e-12);
}

#[test]
fn bundled_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["gen", "--setting", "bundled", "--d1", "6", "--d2", "5", "--rank", "1", "--alpha", "1", "--seed", "1", "--out", "t.csv"]);
    ok(d, &["sample", "bundled", "--theta", "t.csv", "--k1", "3", "--k2", "2", "--n", "100", "--seed", "2", "--out", "d.jsonl"]);
    let first = fs::read_to_string(d.join("d.jsonl")).unwrap();
    assert!(first.lines().next().unwrap().contains("\"S\""));
    ok(
        d,
        &[
            "fit", "--setting", "bundled", "--data", "d.jsonl", "--d1", "6", "--d2", "5", "--lambda", "0.02", "--tol",
            "1e-8", "--max-iter", "1000", "--out", "e.csv",
        ],
    );
    ok(d, &["eval", "--setting", "bundled", "--theta", "t.csv", "--estimate", "e.csv"]);
}

#[test]
fn bounds_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["bounds", "--setting", "collab", "--d1", "50", "--d2", "50", "--rank", "3", "--alpha", "5", "--k", "20"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for key in ["lambda_0", "upper_bound", "lower_bound", "crossover_samples", "sample_regime_ok"] {
        assert!(text.contains(key), "missing {key} in {text}");
    }
    let out = ok(
        dir.path(),
        &["bounds", "--setting", "bundled", "--d1", "30", "--d2", "20", "--alpha", "1", "--n", "1000", "--q", "0.5", "--rho", "2"],
    );
    assert!(String::from_utf8_lossy(&out.stdout).contains("lambda_1"));
    assert_eq!(run(dir.path(), &["bounds", "--setting", "collab", "--d1", "5", "--d2", "5", "--rank", "1", "--alpha", "1"]).status.code(), Some(2));
}

#[test]
fn partition_output_format() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["partition", "--k", "3", "--out", "p.txt"]);
    let text = fs::read_to_string(dir.path().join("p.txt")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6);
    assert_eq!(lines[0], "(1,2,3)");
}

#[test]
fn experiment_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("spec.json"),
        r#"{"setting":"collab","d1":8,"d2":8,"rank_list":[1],"k_list":[3,6],"alpha_list":[1.0],
            "lambda_multipliers":[1.0,4.0],"trials":2,"base_seed":3}"#,
    )
    .unwrap();
    ok(d, &["experiment", "scaling", "--config", "spec.json", "--out", "s.csv"]);
    ok(d, &["experiment", "lambda-sweep", "--config", "spec.json", "--out", "l.csv"]);
    let csv = fs::read_to_string(d.join("s.csv")).unwrap();
    assert_eq!(
        csv.lines().next().unwrap(),
        "setting,d1,d2,r,k_or_n,alpha,lambda,seed,trial,rmse,iterations,objective,converged"
    );
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2);
    for kind in ["scaling", "collapse", "lambda"] {
        ok(d, &["plot", "--records", "l.csv", "--kind", kind, "--out", "p.gp"]);
        assert!(fs::read_to_string(d.join("p.gp")).unwrap().contains("l.csv"));
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let missing = run(d, &["sample", "collab", "--theta", "none.csv", "--k", "3", "--seed", "0", "--out", "x"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));
    assert_eq!(run(d, &["gen", "--setting", "collab", "--d1", "3", "--d2", "3", "--rank", "5", "--alpha", "1", "--seed", "0", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(d, &["partition", "--k", "2", "--out", "p"]).status.code(), Some(2));
    assert_eq!(run(d, &["nonsense"]).status.code(), Some(2));
    fs::write(d.join("bad.csv"), "1,2\n3\n").unwrap();
    assert_eq!(run(d, &["eval", "--setting", "collab", "--theta", "bad.csv", "--estimate", "bad.csv"]).status.code(), Some(2));
}
