use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_factconf")).args(args).env("FC_LOG", "error").output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["fit", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["fit", "--in", "/nonexistent/dir", "--out", "/tmp/x"]).status.code(), Some(1));
    assert_eq!(run(&["simulate", "--scenario", "no-such", "--out", "/tmp/x"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn numerical_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--scenario", "linear-fixed", "--seed", "1", "--out", s(&sim)]);
    // A constant exposure series leaves nothing to factor.
    let text = fs::read_to_string(sim.join("exposure.csv")).unwrap();
    let mut lines = text.lines();
    let mut flat = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let v = if f[0] == "1" { "1.0" } else { f[2] };
        flat.push_str(&format!("{},{},{v}\n", f[0], f[1]));
    }
    fs::write(sim.join("exposure.csv"), flat).unwrap();
    let out = run(&["fit", "--in", s(&sim), "--out", s(&tmp.path().join("fit")), "--rank", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("zero residual variance"));
}

#[test]
fn simulate_then_fit_with_neighbor_file() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--scenario", "interference", "--seed", "4", "--out", s(&sim)]);
    for f in ["exposure.csv", "outcome.csv", "covariates.csv", "coords.csv", "neighbors.csv", "truth.json"] {
        assert!(sim.join(f).exists(), "{f}");
    }
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(sim.join("truth.json")).unwrap()).unwrap();
    assert!(truth.to_string().contains("spillover"));
    let out = tmp.path().join("fit");
    let nb = format!("file:{}", s(&sim.join("neighbors.csv")));
    let stdout = ok(&["fit", "--in", s(&sim), "--out", s(&out), "--rank", "4", "--neighbors", &nb]);
    assert!(stdout.starts_with("fc direct="), "{stdout}");
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("estimate.json")).unwrap()).unwrap();
    assert_eq!(doc["estimate"]["beta"].as_array().unwrap().len(), 2);
    assert!(doc["generated_at_unix"].is_number());
    let curve = fs::read_to_string(out.join("curve_0.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "exposure,effect,lower,upper");
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--scenario", "linear-fixed", "--seed", "2", "--out", s(&sim)]);
    let cfg = tmp.path().join("run.toml");
    fs::write(&cfg, "method = \"ife\"\nrank = 2\n").unwrap();
    let out = tmp.path().join("a");
    let stdout = ok(&["fit", "--config", s(&cfg), "--in", s(&sim), "--out", s(&out)]);
    assert!(stdout.starts_with("ife "), "{stdout}");
    let doc = fs::read_to_string(out.join("estimate.json")).unwrap();
    assert!(doc.contains("\"rank\": 2"));
    let out = tmp.path().join("b");
    ok(&["fit", "--config", s(&cfg), "--in", s(&sim), "--out", s(&out), "--rank", "3"]);
    assert!(fs::read_to_string(out.join("estimate.json")).unwrap().contains("\"rank\": 3"));

    fs::write(&cfg, "rnak = 2\n").unwrap();
    assert_eq!(run(&["fit", "--config", s(&cfg), "--in", s(&sim), "--out", s(&out)]).status.code(), Some(1));
}

#[test]
fn rank_and_benchmark_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--scenario", "linear-fixed", "--seed", "3", "--out", s(&sim)]);
    let stdout =
        ok(&["rank", "--in", s(&sim), "--out", s(&tmp.path().join("r")), "--method", "eigen-ratio", "--max-rank", "6"]);
    assert_eq!(stdout.trim(), "rank 3");
    let rank: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("r/rank.json")).unwrap()).unwrap();
    assert_eq!(rank["selection"]["rank"], 3);

    let bench = tmp.path().join("bench");
    let table = ok(&[
        "benchmark",
        "--scenario",
        "linear-fixed,misspec-t5",
        "--estimators",
        "oracle,ife3",
        "--reps",
        "2",
        "--out",
        s(&bench),
    ]);
    assert!(table.contains("misspec-t5"));
    let csv = fs::read_to_string(bench.join("benchmark.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(bench.join("benchmark.txt").exists());
}

#[test]
fn per_unit_curves_take_their_own_df() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    ok(&["simulate", "--scenario", "linear-fixed", "--seed", "5", "--out", s(&sim)]);
    let out = tmp.path().join("fit");
    let base = ["fit", "--in", s(&sim), "--out", s(&out), "--rank", "3", "--mode", "per-unit"];
    ok(&[&base[..], &["--curve-df", "6"]].concat());
    assert!(fs::read_to_string(out.join("estimate.json")).unwrap().contains("\"curve_df\": 6"));
    assert_eq!(run(&[&base[..], &["--curve-df", "2"]].concat()).status.code(), Some(1));
}
