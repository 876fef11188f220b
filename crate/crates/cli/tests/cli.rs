use std::fs;
use std::process::{Command, Output};

fn sde_qbic(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sde-qbic")).args(args).env_remove("SDE_QBIC_WORKERS").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn limits_prints_both_tables() {
    let o = sde_qbic(&["limits", "--experiment", "diffusion-4.1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("-1.2089"), "{text}");
    assert!(text.contains("-0.0624"));
    assert!(text.contains("-0.8193"));
    assert!(text.contains("optimal model: (scale1, drift1)"));
}

#[test]
fn limits_json_is_a_report() {
    let o = sde_qbic(&["limits", "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["m1_star"], 0);
    assert_eq!(v["g1_star"].as_array().unwrap().len(), 7);
}

#[test]
fn usage_errors_exit_with_one() {
    for args in [
        &["limits", "--experiment", "nope"][..],
        &["run"],
        &["run", "--scheme", "0.01"],
        &["fit", "--path", "/nonexistent.csv", "--scale", "scale1", "--drift", "drift1"],
        &["frobnicate"],
    ] {
        let o = sde_qbic(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
    assert_eq!(sde_qbic(&["--help"]).status.code(), Some(0));
}

#[test]
fn malformed_config_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"experiment": "diffusion-4.1", "replicats": 3}"#).unwrap();
    let o = sde_qbic(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("replicats"));
}

#[test]
fn simulate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("path.csv");
    let o = sde_qbic(&["simulate", "--scheme", "0.01,10", "--seed", "3", "--output", path.to_str().unwrap()]);
    assert!(o.status.success());
    let csv = fs::read_to_string(&path).unwrap();
    assert!(csv.starts_with("t,x\n0,0\n"));
    assert_eq!(csv.lines().count(), 1002);

    let o = sde_qbic(&["fit", "--path", path.to_str().unwrap(), "--scale", "scale1", "--drift", "drift1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["model"], "scale1+drift1");
    assert_eq!(v["gamma_hat"].as_array().unwrap().len(), 2);
    assert_eq!(v["alpha_hat"].as_array().unwrap().len(), 1);

    let o = sde_qbic(&["fit", "--path", path.to_str().unwrap(), "--scale", "scale9", "--drift", "drift1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_writes_csvs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"experiment": "diffusion-4.1", "schemes": [[0.02, 10]], "replicates": 2}"#).unwrap();
    let out = |name: &str, workers: &str| {
        let o = dir.path().join(name);
        let r = sde_qbic(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--replicates",
            "3",
            "--seed",
            "9",
            "--workers",
            workers,
            "--output",
            o.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        (fs::read(o.join("frequencies.csv")).unwrap(), fs::read(o.join("weights.csv")).unwrap())
    };
    let a = out("a", "1");
    let b = out("b", "2");
    assert_eq!(a, b);
    let freq = String::from_utf8(a.0).unwrap();
    let total: usize = freq.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 3);
}

#[test]
fn verify_expansion_emits_csv() {
    let o = sde_qbic(&[
        "verify-expansion",
        "--target",
        "drift:1",
        "--scheme",
        "0.02,10",
        "--replicates",
        "2",
        "--workers",
        "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("n,replicate,log_marginal,prediction,residual"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("500,0,"));
    assert_eq!(sde_qbic(&["verify-expansion", "--target", "drift:0", "--scheme", "0.02,10"]).status.code(), Some(1));
}
