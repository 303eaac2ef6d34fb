use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn heatflow(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heatflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn two_point(dir: &Path) -> String {
    let p = dir.join("two_point.json");
    fs::write(
        &p,
        r#"{"points": 2, "edges": [[0, 1, 1.0]], "measure": [0.5, 0.5], "K": 1.0}"#,
    )
    .unwrap();
    p.to_str().unwrap().to_owned()
}

fn summary(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap()
}

#[test]
fn flow_writes_matrices_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let space = two_point(dir.path());
    let out = dir.path().join("run");
    let o = heatflow(&["flow", "--space", &space, "--times", "0,0.1,0.5"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for t in ["0", "0.1", "0.5"] {
        assert!(out.join(format!("dtilde_t{t}.csv")).exists());
        assert!(out.join(format!("dt_t{t}.csv")).exists());
    }
    let csv = fs::read_to_string(out.join("dtilde_t0.1.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("point,0,1"));
    let row: Vec<f64> = lines
        .next()
        .unwrap()
        .split(',')
        .skip(1)
        .map(|x| x.parse().unwrap())
        .collect();
    assert!((row[1] - (-0.1f64).exp()).abs() < 1e-12);

    let s = summary(&out);
    assert_eq!(s["command"], "flow");
    assert!(s["wall_time_seconds"].as_f64().unwrap() >= 0.0);
    let checks = s["checks"].as_array().unwrap();
    assert!(!checks.is_empty());
    for c in checks {
        for key in ["name", "value", "bound", "pass"] {
            assert!(c.get(key).is_some(), "{c}");
        }
        assert_eq!(c["pass"], true);
    }
}

#[test]
fn negative_time_is_an_input_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let space = two_point(dir.path());
    let out = dir.path().join("run");
    let o = heatflow(&["flow", "--space", &space, "--times", "-1"], &out);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn malformed_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"points": 3, "edges": [[0, 1, 1.0]], "measure": [1, 1, 1]}"#).unwrap();
    let out = dir.path().join("run");
    let cases: [&[&str]; 5] = [
        &["flow", "--space", bad.to_str().unwrap()],
        &["flow", "--geometry", "circle", "--n", "300"],
        &["flow", "--geometry", "circle", "--times", "0.5,0.1"],
        &["flow"],
        &["tangency", "--geometry", "sphere", "--tmax", "0.2", "--tmin", "0.03"],
    ];
    for args in cases {
        let o = heatflow(args, &out);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        assert!(!out.exists(), "{args:?}");
    }
}

#[test]
fn pair_lists_go_beyond_the_matrix_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = heatflow(
        &[
            "flow",
            "--geometry",
            "circle",
            "--n",
            "300",
            "--pairs",
            "0:150",
            "--times",
            "0.1",
        ],
        &out,
    );
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("pairs_t0.1.csv")).unwrap();
    assert!(csv.starts_with("x,y,dtilde,duality_gap\n0,150,"));
}

#[test]
fn outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = ["flow", "--geometry", "torus", "--times", "0.05,0.2"];
    assert_eq!(heatflow(&args, &a).status.code(), Some(0));
    assert_eq!(heatflow(&args, &b).status.code(), Some(0));
    for name in ["dtilde_t0.05.csv", "dt_t0.05.csv", "dtilde_t0.2.csv", "dt_t0.2.csv"] {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn sphere_tangency_slope() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = [
        "tangency",
        "--geometry",
        "sphere",
        "--r",
        "1",
        "--lmax",
        "80",
        "--tmax",
        "0.2",
        "--tmin",
        "0.0125",
    ];
    let o = heatflow(&args, &out);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("tangency.csv")).unwrap();
    assert!(csv.starts_with("t,g_t,slope,target,deviation\n"));
    let slope: f64 = csv
        .lines()
        .last()
        .unwrap()
        .split(',')
        .find_map(|f| f.strip_prefix("# extrapolated="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((slope + 2.0).abs() < 0.1);
}

#[test]
fn false_curvature_claim_fails_checks() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = heatflow(&["contraction", "--geometry", "circle", "--k", "5"], &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(out.join("contraction.csv").exists());
    let s = summary(&out);
    assert!(s["checks"].as_array().unwrap().iter().any(|c| c["pass"] == false));
}

#[test]
fn tolerance_overrides_are_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let space = two_point(dir.path());
    let out = dir.path().join("run");
    let o = heatflow(&["contraction", "--space", &space, "--tol", "contraction=0.001"], &out);
    assert_eq!(o.status.code(), Some(0));
    let s = summary(&out);
    assert_eq!(s["config"]["tolerances"]["contraction"], 0.001);
    assert_eq!(s["config"]["common"]["tolerance_overrides"][0], "contraction=0.001");
    let excess = s["checks"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == "contraction_excess")
        .unwrap();
    assert_eq!(excess["bound"], 0.001);

    let o = heatflow(
        &["contraction", "--space", &space, "--tol", "nonsense=1"],
        &dir.path().join("other"),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sphere_contraction_and_refinement() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sphere");
    assert_eq!(
        heatflow(&["contraction", "--geometry", "sphere", "--lmax", "60"], &out)
            .status
            .code(),
        Some(0)
    );
    let rows = fs::read_to_string(out.join("contraction.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 4 * 4);

    let out = dir.path().join("refine");
    let o = heatflow(&["refine", "--sizes", "32,64,128", "--probes", "0:0.5"], &out);
    assert_eq!(o.status.code(), Some(0));
    assert!(fs::read_to_string(out.join("refine.csv"))
        .unwrap()
        .starts_with("n,probe0,max_duality_gap\n32,"));
}

#[test]
fn continuity_and_selftest_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cont");
    assert_eq!(
        heatflow(&["continuity", "--geometry", "circle", "--n", "16"], &out)
            .status
            .code(),
        Some(0)
    );
    assert!(out.join("continuity.csv").exists());

    let out = dir.path().join("self");
    let o = heatflow(&["selftest", "--seed", "7"], &out);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    assert_eq!(summary(&out)["config"]["seed"], 7);
}
