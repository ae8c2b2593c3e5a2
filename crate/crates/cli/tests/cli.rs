use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavity-qrm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn read(dir: &Path, file: &str) -> String {
    fs::read_to_string(dir.join(file)).unwrap_or_else(|e| panic!("{file}: {e}"))
}

#[test]
fn reconstruct_writes_a_complete_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&[
        "reconstruct",
        "--nx",
        "11",
        "--modes",
        "3",
        "--delta",
        "0.1",
        "--seed",
        "4",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "metrics.json")).unwrap();
    assert!(metrics["rel_l2"].as_f64().unwrap().is_finite());
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    assert!(report["stages"]
        .as_array()
        .unwrap()
        .iter()
        .any(|s| s["stage"] == "solve"));
    let config: serde_json::Value =
        serde_json::from_str(&read(dir.path(), "resolved_config.json")).unwrap();
    assert_eq!(config["nx"], 11);
    assert_eq!(config["seed"], 4);
    assert_eq!(config["quad_order"], 46);
    for f in ["fields/p_comp.csv", "fields/p_true.csv"] {
        let text = read(dir.path(), f);
        assert!(text.starts_with("x,y,value\n"));
        assert_eq!(text.lines().count(), 1 + 11 * 11);
    }
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"nx": 11, "n_modes": 5, "problem": "neumann_bc", "delta": 0.2}"#,
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = run(&[
        "forward",
        "--config",
        cfg.to_str().unwrap(),
        "--modes",
        "2",
        "--problem",
        "1",
        "--preconditioner",
        "jacobi",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let config: serde_json::Value =
        serde_json::from_str(&read(&out, "resolved_config.json")).unwrap();
    assert_eq!(config["nx"], 11);
    assert_eq!(config["n_modes"], 2);
    assert_eq!(config["problem"], "dirichlet_bc");
    assert_eq!(config["delta"], 0.2);
    assert_eq!(config["solver"]["preconditioner"], "jacobi");
    assert!(read(&out, "cauchy.csv").starts_with("node,x,y,t,value\n"));
    assert!(out.join("cauchy.json").exists());
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"nx": 11, "no_such_field": 1}"#).unwrap();
    let o = run(&[
        "reconstruct",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_field"));

    let o = run(&[
        "reconstruct",
        "--nx",
        "11",
        "--modes",
        "2",
        "--epsilon=-1",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(
        stderr.contains("stage `assemble` failed: invalid argument: regularization"),
        "{stderr}"
    );

    let o = run(&["reconstruct", "--nx", "11"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("--out"));
}

#[test]
fn identical_runs_are_byte_identical() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = run(&[
            "reconstruct",
            "--nx",
            "11",
            "--modes",
            "3",
            "--seed",
            "9",
            "--out",
            d.path().to_str().unwrap(),
        ]);
        assert!(o.status.success());
    }
    // resolved_config.json differs only in output_dir
    for f in ["metrics.json", "fields/p_comp.csv", "fields/p_true.csv"] {
        assert_eq!(read(dirs[0].path(), f), read(dirs[1].path(), f), "{f}");
    }
}

#[test]
fn cutoff_and_compare1d_bundles() {
    let dir = tempfile::tempdir().unwrap();
    let cut = dir.path().join("cutoff");
    let o = run(&["cutoff", "--nx", "21", "--out", cut.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csvs = fs::read_dir(cut.join("fields")).unwrap().count();
    assert_eq!(csvs, 3);
    let entries: serde_json::Value = serde_json::from_str(&read(&cut, "cutoff.json")).unwrap();
    assert_eq!(entries.as_array().unwrap().len(), 3);

    let cmp = dir.path().join("cmp");
    let o = run(&[
        "compare1d",
        "--test",
        "2",
        "--nx",
        "41",
        "--out",
        cmp.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for sub in ["klibanov", "trigonometric"] {
        let text = read(&cmp.join(sub), "fields/p_comp.csv");
        assert!(text.starts_with("x,value\n"));
        assert_eq!(text.lines().count(), 42);
    }
}

#[test]
fn sweep_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "sweep",
        "--nx",
        "11",
        "--modes",
        "3",
        "--deltas",
        "0,0.1,0.2",
        "--seeds",
        "1,2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table: serde_json::Value = serde_json::from_str(&read(dir.path(), "sweep.json")).unwrap();
    assert_eq!(table["rows"].as_array().unwrap().len(), 3);
    assert_eq!(table["total_steps"], 2);
}

#[test]
fn shipped_configs_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut count = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let config = cavity_qrm::experiments::ExperimentConfig::from_json_file(&path)
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        config
            .resolved()
            .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        count += 1;
    }
    assert!(count >= 4);
}
