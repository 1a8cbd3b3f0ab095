use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stocontract")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn field(table: &str, key: &str) -> f64 {
    table
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("{key} missing in {table}"))
        .parse()
        .unwrap()
}

#[test]
fn simulate_ou_passes_with_csv_on_stdout() {
    let o = run(&["simulate", "--system", "ou1d", "--ensemble", "500", "--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("time,side,mean_sq_dist,stderr,n_alive,bound,verdict"), "{out}");
    assert!(stderr(&o).contains("verdict: PASS"));
    assert!(out.lines().skip(1).all(|l| l.ends_with(",PASS")));
}

#[test]
fn same_seed_same_bytes() {
    let args = ["simulate", "--system", "hybrid-linear", "--ensemble", "200", "--seed", "9", "--horizon", "2"];
    let a = run(&args);
    let b = run(&args);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let c = run(&["simulate", "--system", "hybrid-linear", "--ensemble", "200", "--seed", "10", "--horizon", "2"]);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn print_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let first = run(&["simulate", "--system", "linear-map", "--seed", "5", "--print-config"]);
    assert_eq!(first.status.code(), Some(0));
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, &first.stdout).unwrap();
    let second = run(&["simulate", "--config", path.to_str().unwrap(), "--print-config"]);
    assert_eq!(second.status.code(), Some(0));
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn input_errors_exit_2_with_json_on_stderr() {
    let o = run(&["simulate", "--system", "no-such-system"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert!(err["error"].is_string() && err["message"].is_string());

    let o = run(&["bounds", "--kind", "discrete", "--beta", "1.2", "--c", "1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = run(&["cpg", "--ensemble", "0"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"system": {"name": "ou1d", "rho": 0.5, "sigma": 1.0, "extra": 1}}"#).unwrap();
    let o = run(&["simulate", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn violated_bound_exits_4() {
    // Bounded-growth regime: pre-reset moments overshoot the constant.
    let dir = tempfile::tempdir().unwrap();
    let printed = run(&["simulate", "--system", "hybrid-linear", "--print-config"]);
    let mut cfg: serde_json::Value = serde_json::from_slice(&printed.stdout).unwrap();
    cfg["system"]["a"] = serde_json::json!(1.0);
    cfg["ensemble"]["pairs"] = serde_json::json!(2000);
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = dir.path().join("run");
    let o = run(&["simulate", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["verdict"], "FAIL");
    let csv = std::fs::read_to_string(out.join("ensemble.csv")).unwrap();
    assert!(csv.lines().skip(1).any(|l| l.contains(",pre,") && l.ends_with(",FAIL")), "{csv}");
}

#[test]
fn bounds_table() {
    let o = run(&["bounds", "--kind", "discrete", "--beta", "0.25", "--c", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let t = stdout(&o);
    assert!((field(&t, "asymptotic_bound") - 8.0 / 3.0).abs() < 1e-9);

    let o = run(&["bounds", "--kind", "discrete", "--beta", "0.25", "--c", "1", "--noise-free"]);
    assert!((field(&stdout(&o), "asymptotic_bound") - 4.0 / 3.0).abs() < 1e-9);

    let o = run(&["bounds", "--kind", "hybrid", "--beta", "0.9", "--lambda", "-1", "--c-d", "1", "--c-c", "1", "--tau", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("theorem_tag\tthm4-unbounded"));

    let o = run(&["bounds", "--kind", "hybrid", "--beta", "0.5", "--lambda", "0", "--c-d", "1", "--c-c", "1", "--tau", "1", "--json"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["theorem_tag"], "thm3");
}

#[test]
fn certify_then_bounds_from_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["certify", "--system", "hybrid-linear", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let cert = dir.path().join("certificate.json");
    assert!(Path::new(&cert).exists());
    let o = run(&["bounds", "--certificate", cert.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    // β = 0.25, λ = 1, C_d = C_c = 1, τ = 0.5.
    let t = stdout(&o);
    assert!(t.contains("theorem_tag\tthm2"), "{t}");
}

#[test]
fn cpg_without_noise_phase_locks() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "cpg", "--sigma-c", "0", "--sigma-d", "0", "--ensemble", "4", "--horizon", "10", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(s["steady_state_mean"].as_f64().unwrap() < 1e-6);
    for f in ["trace.csv", "aligned.csv", "delta.csv", "delta_mean.csv", "summary.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn cpg_both_reports_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["cpg", "--both", "--ensemble", "40", "--horizon", "10", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let s: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(s["weak_over_strong"].as_f64().unwrap() > 5.0);
    assert_eq!(s["weak"]["sync_condition"], false);
    assert_eq!(s["strong"]["sync_condition"], true);
    assert!(dir.path().join("weak/summary.json").exists() && dir.path().join("strong/summary.json").exists());
}
