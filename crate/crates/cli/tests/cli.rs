use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn etcon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_etcon"))
        .args(args)
        .env_remove("ETCON_OUT_DIR")
        .output()
        .unwrap()
}

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const SHORT: &str = r#"{
    "model": {"a": [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [0.0, 0.0, 0.0]], "b": [[0.0], [0.0], [1.0]]},
    "graph": {"generator": "ring", "n": 6},
    "sim": {"t_end": 3.0, "dt": 0.001, "event_tol": 1e-14},
    "initial_states": {"random": {"seed": 1, "low": -1.0, "high": 1.0}}
}"#;

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn gains_match_reference_values() {
    let out = etcon(&["gains", configs().join("leaderless_ring.json").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("P =\n    2.4142     2.4142     1.0000\n    2.4142     4.8284     2.4142\n    1.0000     2.4142     2.4142\n"));
    assert!(text.contains("K =\n   -1.0000    -2.4142    -2.4142\n"));
    assert!(text.contains("Gamma =\n    1.0000     2.4142     2.4142\n    2.4142     5.8284     5.8284\n"));
}

#[test]
fn scalar_gains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "scalar.json",
        r#"{"model": {"a": [[0.0]], "b": [[1.0]]}, "graph": {"generator": "path", "n": 2},
            "initial_states": {"explicit": [[1.0], [0.0]]}}"#,
    );
    let out = etcon(&["gains", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text, "P =\n    1.0000\nK =\n   -1.0000\nGamma =\n    1.0000\n");
}

#[test]
fn undetectable_output_is_an_assumption_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "blind.json",
        &SHORT.replace(
            "\"b\": [[0.0], [0.0], [1.0]]}",
            "\"b\": [[0.0], [0.0], [1.0]], \"c\": [[0.0, 0.0, 0.0]]}, \"protocol\": {\"variant\": \"observer\"}",
        ),
    );
    let out = etcon(&["gains", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn run_summary_reports_gains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "short.json", SHORT);
    let out_dir = dir.path().join("out");
    let out = etcon(&["run", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    let k: Vec<f64> = summary["gains"]["K"][0]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (got, want) in k.iter().zip([-1.0, -2.4142, -2.4142]) {
        assert!((got - want).abs() < 1e-3);
    }
    for key in ["events", "final_error", "ultimate_bound", "zeno", "grid_spacing", "event_tol"] {
        assert!(!summary[key].is_null(), "summary lacks {key}");
    }
    assert!(summary["events"]["min_interval"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["zeno"]["verdict"], "pass");
    let header = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert!(header.starts_with("t,agent,x0,x1,x2\n"));
}

#[test]
fn identical_runs_produce_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "short.json", SHORT);
    let dirs = [dir.path().join("a"), dir.path().join("b")];
    for d in &dirs {
        let out = etcon(&["run", cfg.to_str().unwrap(), "--out", d.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr(&out));
    }
    for f in ["trajectory.csv", "events.csv", "weights.csv"] {
        assert_eq!(fs::read(dirs[0].join(f)).unwrap(), fs::read(dirs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "short.json", SHORT);
    let target = dir.path().join("env-out");
    let out = Command::new(env!("CARGO_BIN_EXE_etcon"))
        .args(["run", cfg.to_str().unwrap()])
        .env("ETCON_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(target.join("summary.json").exists());
}

#[test]
fn disconnected_graph_is_an_assumption_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "split.json",
        &SHORT.replace(
            "{\"generator\": \"ring\", \"n\": 6}",
            "{\"n\": 4, \"edges\": [[0, 1], [2, 3]]}",
        ),
    );
    let out = etcon(&["run", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("connected"), "{}", stderr(&out));
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "unknown.json", &SHORT.replace("\"dt\"", "\"step\""));
    let out = etcon(&["run", unknown.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("step"));
    let out = etcon(&["run", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let bad_delta = write_config(
        dir.path(),
        "delta.json",
        &SHORT.replace("\"sim\"", "\"protocol\": {\"delta\": -1.0}, \"sim\""),
    );
    assert_eq!(etcon(&["run", bad_delta.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn zeno_guard_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "guard.json",
        &SHORT.replace("\"event_tol\": 1e-14", "\"event_tol\": 1e-14, \"max_events_per_unit_time\": 1.0"),
    );
    let out = etcon(&["run", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{}", stderr(&out));
}

#[test]
fn sweep_over_topologies() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "short.json", SHORT);
    let out_dir = dir.path().join("sweep");
    let out = etcon(&[
        "sweep",
        cfg.to_str().unwrap(),
        "--param",
        "graph",
        "--values",
        "ring,star,complete",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let table: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("sweep_summary.json")).unwrap()).unwrap();
    let runs = table["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    assert!(runs.iter().all(|r| r["events"].as_u64().unwrap() >= 6));
    for v in ["ring", "star", "complete"] {
        assert!(out_dir.join(format!("graph={v}")).join("summary.json").exists());
    }
}

#[test]
fn sweep_without_values_fails() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "short.json", SHORT);
    let out = etcon(&["sweep", cfg.to_str().unwrap(), "--param", "mu", "--values", ""]);
    assert_eq!(out.status.code(), Some(2));
}
