//! Black-box checks of the binary: exit codes, artifact shapes, and the
//! error record left behind on failure.

use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ifs-lab"))
        .args(args)
        .output()
        .expect("binary spawns")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).expect("write file");
}

#[test]
fn check_passes_on_the_default_model_and_writes_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    write(&cfg, "[model]\nt_nodes = 128\nx_nodes = 64\n");
    let out = dir.path().join("out");
    let res = run(&[
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(v["all_ok"], serde_json::json!(true));
    assert_eq!(v["subcommand"], serde_json::json!("check"));
    assert!(v["config_sha256"].as_str().unwrap().len() == 64);
    assert!(out.join("run_info.json").exists());
}

#[test]
fn check_rejects_an_expanding_model_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    // c0 = 1.05 pushes the average contraction factor above one.
    write(
        &cfg,
        "[model]\nc0 = 1.05\nt_nodes = 128\nx_nodes = 64\n",
    );
    let out = dir.path().join("out");
    let res = run(&[
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(3));
    // The verdict is a result, not a crash: the report is still written.
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(v["all_ok"], serde_json::json!(false));
}

#[test]
fn gated_subcommands_refuse_an_uncertified_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    write(
        &cfg,
        "[model]\nc0 = 1.05\nt_nodes = 128\nx_nodes = 64\n[experiment]\nn = 3\nreplicas = 100\n",
    );
    let out = dir.path().join("out");
    let res = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(3));
    let record = std::fs::read_to_string(out.join("error.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&record).unwrap();
    assert_eq!(v["kind"], serde_json::json!("assumption"));
    assert_eq!(v["exit_code"], serde_json::json!(3));
    assert!(!out.join("trajectory.csv").exists());
}

#[test]
fn invalid_config_keys_exit_2_with_an_error_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    write(&cfg, "not_a_key = true\n");
    let out = dir.path().join("out");
    let res = run(&[
        "check",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    let record = std::fs::read_to_string(out.join("error.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&record).unwrap();
    assert_eq!(v["kind"], serde_json::json!("config"));
}

#[test]
fn starved_particle_budget_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    write(
        &cfg,
        "[model]\nt_nodes = 128\nx_nodes = 64\n[experiment]\nparticles = 10\nn = 3\n",
    );
    let out = dir.path().join("out");
    let res = run(&[
        "rate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn distance_runs_on_explicit_csv_clouds() {
    let dir = tempfile::tempdir().unwrap();
    let mu = dir.path().join("mu.csv");
    let nu = dir.path().join("nu.csv");
    write(&mu, "x\n0.0\n");
    write(&nu, "x\n1.0\n");
    let cfg = dir.path().join("run.toml");
    write(
        &cfg,
        &format! {
            "[experiment]\nmu_csv = \"{}\"\nnu_csv = \"{}\"\n",
            mu.display(),
            nu.display()
        },
    );
    let out = dir.path().join("out");
    let res = run(&[
        "distance",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    // Two unit point masses one apart: the distance is exactly one.
    assert!((v["value"].as_f64().unwrap() - 1.0).abs() <= 1e-9);
    assert!(out.join("witness.csv").exists());
}

#[test]
fn missing_input_cloud_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    write(
        &cfg,
        "[experiment]\nmu_csv = \"/nonexistent/mu.csv\"\nnu_csv = \"/nonexistent/nu.csv\"\n",
    );
    let out = dir.path().join("out");
    let res = run(&[
        "distance",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(4));
    let record = std::fs::read_to_string(out.join("error.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&record).unwrap();
    assert_eq!(v["kind"], serde_json::json!("io"));
}

#[test]
fn seed_override_changes_results_and_the_recorded_hash() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    write(
        &cfg,
        "[model]\nt_nodes = 128\nx_nodes = 64\n[experiment]\nn = 5\nreplicas = 200\n",
    );
    let mut outputs = Vec::new();
    for seed in ["1", "2"] {
        let out = dir.path().join(format!("out-{seed}"));
        let res = run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(res.status.success());
        outputs.push((
            std::fs::read(out.join("trajectory.csv")).unwrap(),
            std::fs::read_to_string(out.join("summary.json")).unwrap(),
        ));
    }
    assert_ne!(outputs[0].0, outputs[1].0, "seed change left the trajectory fixed");
    let h = |s: &str| {
        serde_json::from_str::<serde_json::Value>(s).unwrap()["config_sha256"]
            .as_str()
            .unwrap()
            .to_string()
    };
    assert_ne!(h(&outputs[0].1), h(&outputs[1].1));
}
