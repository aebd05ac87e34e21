use std::path::Path;
use std::process::{Command, Output};

use nalgebra::DMatrix;
use rompc::io::write_matrix_market;
use serde_json::{json, Value};
use tempfile::{tempdir, TempDir};

fn rompc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rompc"))
        .args(args)
        .output()
        .expect("run rompc")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Small heat problem synthesized into `dir/design`.
fn synthesized(extra: &[&str]) -> TempDir {
    let dir = tempdir().unwrap();
    let m = path(dir.path(), "model");
    let out = rompc(&[
        "generate",
        "-o",
        &m,
        "--nf",
        "20",
        "--rom-dim",
        "4",
        "--tau",
        "60",
        "--horizon",
        "10",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifest = path(dir.path(), "model/manifest.json");
    let design = path(dir.path(), "design");
    let mut args = vec![
        "synth",
        manifest.as_str(),
        "-o",
        design.as_str(),
        "--eta",
        "1",
        "--jobs",
        "1",
    ];
    args.extend_from_slice(extra);
    let out = rompc(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    dir
}

#[test]
fn synth_writes_design_and_report() {
    let dir = synthesized(&[]);
    assert!(dir.path().join("design/design.json").exists());
    let report = read_json(&dir.path().join("design/report.json"));
    assert_eq!(report["command"], "synth");
    assert!(report["design"]["rho_a_eps"].as_f64().unwrap() < 1.0);
    assert_eq!(report["bounds"]["delta1_waived"], false);
    for c in report["checks"].as_array().unwrap() {
        assert!(["pass", "fail", "skipped"].contains(&c["status"].as_str().unwrap()));
    }
    let out = rompc(&["report", &path(dir.path(), "design/report.json")]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(
        text.contains("error bounds") && text.contains("% of b"),
        "{text}"
    );
}

#[test]
fn skip_delta1_is_reported() {
    let dir = synthesized(&["--skip-delta1"]);
    let report = read_json(&dir.path().join("design/report.json"));
    assert_eq!(report["bounds"]["delta1_waived"], true);
    let delta1 = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "delta1")
        .unwrap();
    assert_eq!(delta1["status"], "skipped");
}

#[test]
fn quiet_simulation_stays_at_zero() {
    let dir = synthesized(&[]);
    let sim = path(dir.path(), "sim");
    let out = rompc(&[
        "simulate",
        &path(dir.path(), "design"),
        &path(dir.path(), "model/manifest.json"),
        "-o",
        &sim,
        "--steps",
        "30",
        "--disturbance",
        "zero",
        "--setpoint",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("sim/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("k,t,z_1"));
    let mut rows = 0;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let values = &fields[2..fields.len() - 1];
        assert!(
            values.iter().all(|v| v.parse::<f64>().unwrap() == 0.0),
            "{line}"
        );
        rows += 1;
    }
    let report = read_json(&dir.path().join("sim/report.json"));
    let k0 = report["simulation"]["summary"]["k0"].as_u64().unwrap() as usize;
    assert_eq!(rows, k0 + 30);
}

#[test]
fn monte_carlo_has_no_violations() {
    let dir = synthesized(&[]);
    let sim = path(dir.path(), "mc");
    let out = rompc(&[
        "simulate",
        &path(dir.path(), "design"),
        &path(dir.path(), "model/manifest.json"),
        "-o",
        &sim,
        "--runs",
        "20",
        "--steps",
        "60",
        "--setpoint",
        "0.2",
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = read_json(&dir.path().join("mc/report.json"));
    let s = &report["simulation"]["summary"];
    assert_eq!(s["runs"], 20);
    assert_eq!(s["violating_runs"], 0);
    assert_eq!(s["failed_runs"], 0);
}

#[test]
fn bounds_rerun_with_longer_horizon() {
    let dir = synthesized(&[]);
    let before = read_json(&dir.path().join("design/report.json"));
    let out = rompc(&[
        "bounds",
        &path(dir.path(), "design"),
        &path(dir.path(), "model/manifest.json"),
        "-o",
        &path(dir.path(), "rebound"),
        "--tau",
        "90",
        "--eta",
        "1",
        "--jobs",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let after = read_json(&dir.path().join("rebound/report.json"));
    assert_eq!(after["bounds"]["tau"], 90);
    let d1 = |r: &Value| r["bounds"]["delta1"].as_f64().unwrap();
    assert!(d1(&after) < d1(&before));
}

#[test]
fn mismatched_design_is_a_usage_error() {
    let dir = synthesized(&[]);
    let other = path(dir.path(), "other");
    assert_eq!(
        code(&rompc(&[
            "generate",
            "-o",
            &other,
            "--nf",
            "22",
            "--rom-dim",
            "4"
        ])),
        0
    );
    let out = rompc(&[
        "simulate",
        &path(dir.path(), "design"),
        &path(dir.path(), "other/manifest.json"),
        "-o",
        &path(dir.path(), "x"),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("incompatible"));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&rompc(&["synth"])), 2);
    assert_eq!(code(&rompc(&["simulate", "--bogus"])), 2);
    assert_eq!(code(&rompc(&["report", "/nonexistent/report.json"])), 2);
}

fn write_manifest(dir: &Path, a: &[f64], z_h: serde_json::Value) -> String {
    let put = |name: &str, m: DMatrix<f64>| write_matrix_market(&dir.join(name), &m).unwrap();
    put("A.mtx", DMatrix::from_row_slice(2, 2, a));
    put("B.mtx", DMatrix::from_row_slice(2, 1, &[0.0, 1.0]));
    put("Bw.mtx", DMatrix::from_row_slice(2, 1, &[0.1, 0.1]));
    put("C.mtx", DMatrix::from_row_slice(1, 2, &[1.0, 1.0]));
    put("H.mtx", DMatrix::from_row_slice(1, 2, &[1.0, 0.0]));
    put("R.mtx", DMatrix::identity(1, 1));
    put("I.mtx", DMatrix::identity(2, 2));
    let manifest = json!({
        "fom": {"a": "A.mtx", "b": "B.mtx", "bw": "Bw.mtx", "c": "C.mtx", "h": "H.mtx",
                "time_domain": {"kind": "discrete", "dt": 0.1}},
        "constraints": {"z": z_h, "u": {"lower": [-1.0], "upper": [1.0]}},
        "disturbances": {"w": {"lower": [-0.1], "upper": [0.1]}, "v": {"lower": [-0.01], "upper": [0.01]}},
        "cost": {"qf": "projected", "r": "R.mtx"},
        "reduction": {"rom_dim": 2, "method": {"basis": {"v": "I.mtx", "w": "I.mtx"}}},
        "bounds": {"tau": 20},
        "ocp": {"horizon": 5}
    });
    let p = dir.join("manifest.json");
    std::fs::write(&p, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn unstabilizable_model_fails_synthesis() {
    let dir = tempdir().unwrap();
    // the first state is unstable and not reachable from u
    let m = write_manifest(
        dir.path(),
        &[1.2, 0.0, 0.0, 0.5],
        json!({"lower": [-1.0], "upper": [1.0]}),
    );
    let out = rompc(&["synth", &m, "-o", &path(dir.path(), "d")]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("controllable"), "{}", stderr(&out));
}

#[test]
fn unbounded_constraints_fail_validation() {
    let dir = tempdir().unwrap();
    write_matrix_market(
        &dir.path().join("Zh.mtx"),
        &DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap();
    let m = write_manifest(
        dir.path(),
        &[0.9, 0.0, 0.0, 0.5],
        json!({"h": "Zh.mtx", "b": [1.0]}),
    );
    let out = rompc(&["synth", &m, "-o", &path(dir.path(), "d")]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(stderr(&out).contains("unbounded"), "{}", stderr(&out));
}
