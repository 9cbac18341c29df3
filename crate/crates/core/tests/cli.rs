use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use gvp::scenario::Scenario;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn gvp(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn solve_reports_value_within_gap() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("minimal.json");
    let o = gvp(&["solve", "--scenario", scenario.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(dir.path());
    assert_eq!(r["command"], "solve");
    assert_eq!(r["status"], "ok");
    let results = &r["results"];
    assert!(results["value"].as_f64().unwrap().is_finite());
    assert!(results["duality_gap"].as_f64().unwrap() <= results["gap_tol"].as_f64().unwrap());
    assert!(dir.path().join("minimizer.csv").exists());
}

#[test]
fn report_echo_reparses_to_the_same_condenser() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("minimal.json");
    let o = gvp(&["capacity", "--scenario", scenario.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let echoed = serde_json::to_string(&report(dir.path())["inputs"]).unwrap();
    let original = Scenario::parse(&fs::read_to_string(&scenario).unwrap()).unwrap();
    let reparsed = Scenario::parse(&echoed).unwrap();
    let (a, b) = (original.condenser().unwrap(), reparsed.condenser().unwrap());
    assert_eq!(a.a, b.a);
    assert_eq!(a.plates.len(), b.plates.len());
    for (p, q) in a.plates.iter().zip(&b.plates) {
        assert_eq!(p.nodes, q.nodes);
        assert_eq!(p.sign, q.sign);
    }
}

#[test]
fn sweep_writes_one_row_per_radius() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("sweep_thin.json");
    let o = gvp(&["sweep", "--scenario", scenario.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("results.csv")).unwrap();
    let radii: Vec<f64> = rdr.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(radii.len(), 4);
    assert!(radii.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn invalid_scenario_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenarios().join("minimal.json"))
        .unwrap()
        .replace("\"a\": [1.0, 1.5]", "\"a\": [1.0, 0.0]");
    let p = write(dir.path(), "bad.json", &text);
    let o = gvp(&["solve", "--scenario", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("$.a[1]"));
}

#[test]
fn unknown_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(scenarios().join("minimal.json"))
        .unwrap()
        .replacen('{', "{\"colour\": 1,", 1);
    let p = write(dir.path(), "bad.json", &text);
    let o = gvp(&["solve", "--scenario", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_scenario_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let o = gvp(&["solve", "--scenario", missing.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn iteration_cap_exits_3_and_still_reports() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = scenarios().join("minimal.json");
    let o = gvp(
        &["solve", "--scenario", scenario.to_str().unwrap(), "--max-iters", "1", "--gap-tol", "1e-15"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    let r = report(dir.path());
    assert_eq!(r["results"]["converged"], false);
}

#[test]
fn selftest_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let o = gvp(&["selftest"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}
