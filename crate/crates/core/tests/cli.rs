use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gvf(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn gvf")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

const CIRCLE_JSON: &str = r#"{"name": "c", "ambient_dim": 2,
 "surfaces": [[{"coeff": 1.0, "exponents": [2, 0]}, {"coeff": 1.0, "exponents": [0, 2]},
               {"coeff": -1.0, "exponents": [0, 0]}]],
 "gains": [1.0],
 "scan_box": [{"min": -2, "max": 2, "count": 21}, {"min": -2, "max": 2, "count": 21}]}"#;

#[test]
fn list_names_every_scenario() {
    let o = Command::new(env!("CARGO_BIN_EXE_gvf")).arg("list").output().unwrap();
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    for name in ["ellipse2d", "cassini2d", "tilted_circle3d", "so3_path", "torus_arm_lift"] {
        assert!(text.contains(name), "{name} missing from {text}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["run", "no_such_scenario", "--x0", "1,0"], dir.path())), 1);
    assert_eq!(code(&gvf(&["run", "ellipse2d", "--x0", "1,0,0"], dir.path())), 1);
    assert_eq!(code(&gvf(&["run", "ellipse2d", "--x0", "1,0", "--dt", "-1"], dir.path())), 1);
    assert_eq!(code(&gvf(&["field", "ellipse2d", "--box", "-3:3"], dir.path())), 1);
    assert_eq!(code(&gvf(&["probe-sphere", "ellipse2d", "--R", "3"], dir.path())), 1);
}

#[test]
fn overflow_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("circle.json");
    std::fs::write(&scenario, CIRCLE_JSON).unwrap();
    let o = gvf(&["run", scenario.to_str().unwrap(), "--x0", "1e200,0"], dir.path());
    assert_eq!(code(&o), 2);
}

#[test]
fn user_scenario_runs() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("circle.json");
    std::fs::write(&scenario, CIRCLE_JSON).unwrap();
    let o = gvf(&["run", scenario.to_str().unwrap(), "--x0", "2,0.5"], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(json(&dir.path().join("meta.json"))["verdict"], "PathConverging");
}

#[test]
fn ellipse_run_converges() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["run", "ellipse2d", "--x0", "3,0.1"], dir.path())), 0);
    let meta = json(&dir.path().join("meta.json"));
    assert_eq!(meta["verdict"], "PathConverging");
    let (header, rows) = csv_rows(&dir.path().join("traj.csv"));
    assert_eq!(header, ["t", "x_0", "x_1", "e_norm", "V", "chi_norm", "residual"]);
    assert_eq!(rows.len() as u64, meta["samples"].as_u64().unwrap());
    assert_eq!(rows[0][1..3], [3.0, 0.1]);
    // x^2/4 + y^2 - 1 at the start
    assert!((rows[0][3] - (9.0 / 4.0 + 0.01 - 1.0)).abs() < 1e-15);
    assert!(rows.last().unwrap()[3] <= 1e-3);
}

#[test]
fn tilted_circle_symmetry_line_reaches_the_singular_point() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["run", "tilted_circle3d", "--x0", "0,1,-1"], dir.path())), 0);
    let meta = json(&dir.path().join("meta.json"));
    assert_eq!(meta["verdict"], "SingularConverging");
    let x: Vec<f64> = meta["final_x"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(x.iter().all(|c| c.abs() < 1e-3), "{x:?}");
}

#[test]
fn so3_run_reaches_the_first_component() {
    let dir = tempfile::tempdir().unwrap();
    let o = gvf(&["run", "so3_path", "--x0", "@rx(0.7853981634)ry(-0.7853981634)"], dir.path());
    assert_eq!(code(&o), 0);
    let meta = json(&dir.path().join("meta.json"));
    assert_eq!(meta["verdict"], "PathConverging");
    assert_eq!(meta["so3_component"], "P1");
    assert!(meta["max_orthonormality_residual"].as_f64().unwrap() < 1e-6);
}

#[test]
fn backward_flag_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["run", "ellipse2d", "--x0", "3,0.1", "--backward"], dir.path())), 0);
    let meta = json(&dir.path().join("meta.json"));
    assert_eq!(meta["sign"], "Backward");
    assert_eq!(meta["verdict"], "PathConverging");
}

#[test]
fn field_grid_has_one_row_per_node() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["field", "ellipse2d", "--box", "-3:3:41,-3:3:41"], dir.path())), 0);
    let (header, rows) = csv_rows(&dir.path().join("field.csv"));
    assert_eq!(header, ["x_0", "x_1", "chi_0", "chi_1", "e_norm", "V"]);
    assert_eq!(rows.len(), 1681);
}

#[test]
fn line_field_points_left() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["field", "line2d", "--box", "-1:1:3,-1:1:3"], dir.path())), 0);
    let (_, rows) = csv_rows(&dir.path().join("field.csv"));
    assert_eq!(rows.len(), 9);
    for r in rows {
        assert_eq!(r[2], -1.0);
        // chi_1 = -k y
        assert!((r[3] + r[1]).abs() < 1e-15);
    }
}

#[test]
fn sphere_field_is_tangent() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["field", "sphere_circle", "--angles", "64,32"], dir.path())), 0);
    let (_, rows) = csv_rows(&dir.path().join("field.csv"));
    assert_eq!(rows.len(), 64 * 32);
    for r in rows {
        let radial: f64 = (0..3).map(|i| r[i] * r[3 + i]).sum();
        assert!(radial.abs() < 1e-12, "{r:?}");
        assert!(((0..3).map(|i| r[i] * r[i]).sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn singular_reports() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["singular", "cassini2d"], dir.path())), 0);
    let points = json(&dir.path().join("singular.json"));
    let mut labels: Vec<&str> = points.as_array().unwrap().iter().map(|p| p["label"].as_str().unwrap()).collect();
    labels.sort();
    assert_eq!(labels, ["Saddle", "Source", "Source"]);

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["singular", "line2d"], dir.path())), 0);
    assert_eq!(json(&dir.path().join("singular.json")).as_array().unwrap().len(), 0);
    assert!(!dir.path().join("singular_region.json").exists());

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["singular", "sphere_circle"], dir.path())), 0);
    let points = json(&dir.path().join("singular.json"));
    let points = points.as_array().unwrap();
    assert_eq!(points.len(), 2);
    for p in points {
        let z = p["x"][2].as_f64().unwrap();
        assert!((z.abs() - 1.0).abs() < 1e-9, "{p}");
    }
}

#[test]
fn bump_disk_writes_the_region() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["singular", "bump_disk"], dir.path())), 0);
    let region = json(&dir.path().join("singular_region.json"));
    assert!(region["points"].as_array().unwrap().len() > 100);
    assert!(region["hull_area"].as_f64().unwrap() > 2.5);
}

#[test]
fn probe_in_the_plane_is_flagged() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["probe-sphere", "ellipse2d", "--R", "3", "--N", "200"], dir.path())), 0);
    let report = json(&dir.path().join("probe.json"));
    assert_eq!(report["hypothesis_met"], false);
    assert!(report["note"].as_str().unwrap().contains("n >= 3"));
    assert_eq!(report["non_converging"].as_array().unwrap().len(), 0);
    assert_eq!(report["starts"].as_array().unwrap().len(), 200);
}

#[test]
fn probe_with_only_candidates() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["probe-sphere", "tilted_circle3d", "--R", "3", "--N", "0"], dir.path())), 0);
    let report = json(&dir.path().join("probe.json"));
    let starts = report["starts"].as_array().unwrap();
    assert_eq!(starts.len(), 2);
    assert!(starts.iter().all(|s| s["candidate"] == true));
    assert!(starts.iter().all(|s| s["verdict"] == "SingularConverging"));
    assert_eq!(report["non_converging"].as_array().unwrap().len(), 2);
    assert_eq!(report["includes_candidates"], true);
}

#[test]
fn check_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["check", "sphere_circle"], dir.path())), 0);
    let report = json(&dir.path().join("check.json"));
    let names: Vec<&str> = report["invariants"].as_array().unwrap().iter().map(|i| i["name"].as_str().unwrap()).collect();
    assert!(names.len() >= 4, "{names:?}");
    assert!(report["invariants"].as_array().unwrap().iter().all(|i| i["passed"] == true));

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["check", "ellipse2d"], dir.path())), 0);

    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&gvf(&["check", "line3d_bad"], dir.path())), 3);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        assert_eq!(code(&gvf(&["run", "cassini2d", "--x0", "0.3,1.7", "--t-max", "20"], dir.path())), 0);
        assert_eq!(code(&gvf(&["probe-sphere", "tilted_circle3d", "--R", "3", "--N", "20"], dir.path())), 0);
    }
    for file in ["traj.csv", "meta.json", "probe.json"] {
        let x = std::fs::read(a.path().join(file)).unwrap();
        let y = std::fs::read(b.path().join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
}
