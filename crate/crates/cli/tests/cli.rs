use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fibreforms"))
}

fn problem(name: &str) -> String {
    format!("{}/problems/{}", env!("CARGO_MANIFEST_DIR"), name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn json(path: PathBuf) -> Value {
    serde_json::from_slice(&fs::read(&path).unwrap_or_else(|e| panic!("{}: {}", path.display(), e))).unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("problem.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn decompose_reconstructs_the_derivative() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["decompose", "--config", &problem("maxwell.toml")], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = json(dir.path().join("decompose.json"));
    assert_eq!(report["reconstruction_matches"], true);
    assert_eq!(report["closed"], true);
    assert_eq!(report["within_bound"], true);
    let shadow = json(dir.path().join("shadow.json"));
    assert_eq!(shadow["ell"], 2);
    assert!(dir.path().join("manifest-decompose.json").exists());
}

#[test]
fn horizontal_potential_has_no_entries() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "schema_version = 1\n[chart]\nn = 2\nk = 1\nlo = [0.0, 0.0, 0.0]\nhi = [1.0, 1.0, 1.0]\n[form]\nliteral = \"x1*x2*dx1 + x2^2*dx2\"\n",
    );
    let out = dir.path().join("out");
    let o = run(&["decompose", "--config", &config], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(out.join("decompose.json"))["entries"], 0);
}

#[test]
fn malformed_form_reports_location() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "schema_version = 1\n[chart]\nn = 1\nk = 1\nlo = [0.0, 0.0]\nhi = [1.0, 1.0]\n[form]\nliteral = \"x1*dx1 + dx7\"\n",
    );
    let o = run(&["decompose", "--config", &config], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains(&format!("{}:8:", config)), "{}", err);
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "schema_version = 1\nbogus = 3\n[chart]\nn = 1\nk = 1\nlo = [0.0, 0.0]\nhi = [1.0, 1.0]\n",
    );
    let o = run(&["relax", "--config", &config], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bogus"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["relax", "--config", "/nonexistent/problem.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    let o = bin().arg("no-such-subcommand").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn convex_integrand_passes_and_negated_fails() {
    let dir = tempfile::tempdir().unwrap();
    let convex = dir.path().join("convex");
    let o = run(&["qc-test", "--config", &problem("qc-convex.toml")], &convex);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(json(convex.join("qc.json"))["violation_found"], false);
    assert!(!convex.join("qc-witness.json").exists());

    let negated = dir.path().join("negated");
    let o = run(&["qc-test", "--config", &problem("qc-negated.toml")], &negated);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(json(negated.join("qc.json"))["violation_found"], true);
    let witness = json(negated.join("qc-witness.json"));
    assert!(witness.is_object());
    let gaps = fs::read_to_string(negated.join("qc-gaps.csv")).unwrap();
    assert_eq!(gaps.lines().count(), 201);
}

#[test]
fn flat_riemannian_test_matches_euclidean_flag() {
    let dir = tempfile::tempdir().unwrap();
    let (r, e) = (dir.path().join("r"), dir.path().join("e"));
    let a = run(&["qc-test", "--config", &problem("qc-double-well.toml"), "--trials", "40"], &r);
    let b = run(&["qc-test", "--config", &problem("qc-double-well.toml"), "--trials", "40", "--euclidean"], &e);
    assert_eq!(a.status.code(), b.status.code());
    assert_eq!(fs::read(r.join("qc-gaps.csv")).unwrap(), fs::read(e.join("qc-gaps.csv")).unwrap());
    let (mut jr, mut je) = (json(r.join("qc.json")), json(e.join("qc.json")));
    for j in [&mut jr, &mut je] {
        j.as_object_mut().unwrap().remove("mode");
    }
    assert_eq!(jr, je);
}

#[test]
fn minimize_matches_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["minimize", "--config", &problem("quadratic.toml"), "--resolution", "17"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let solve = json(dir.path().join("solve.json"));
    let objective = solve["objective"].as_f64().unwrap();
    assert_eq!(solve["descent_violations"], 0);

    let text = fs::read_to_string(problem("quadratic.toml")).unwrap();
    let p = fibreforms::config::Problem::from_toml(&text).unwrap();
    let gp = p.gauged_problem().unwrap();
    let reference = fibreforms::minimizer::oracle::solve_quadratic(&gp, 17, &fibreforms::relaxation::QuadraticCost::new())
        .unwrap()
        .objective;
    assert!((objective - reference).abs() <= 1e-6 * reference, "{} vs {}", objective, reference);
    let history = fs::read_to_string(dir.path().join("history.csv")).unwrap();
    assert!(history.lines().count() > 2);
    assert!(dir.path().join("field.json").exists());
}

#[test]
fn coarse_resolution_has_no_interior_dofs() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["minimize", "--config", &problem("quadratic.toml"), "--resolution", "3"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no interior degrees of freedom"), "{}", stderr(&o));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn reruns_and_replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let args = ["qc-test", "--config", &problem("qc-double-well.toml"), "--trials", "30"];
    let first = run(&[&args[..], &["--threads", "1"]].concat(), &a);
    let second = run(&[&args[..], &["--threads", "8"]].concat(), &b);
    assert_eq!(first.status.code(), second.status.code());
    assert_eq!(snapshot(&a), snapshot(&b));
    let manifest = a.join("manifest-qc-test.json");
    let replay = run(&["replay", manifest.to_str().unwrap(), "--threads", "3"], &c);
    assert_eq!(replay.status.code(), first.status.code());
    assert_eq!(snapshot(&a), snapshot(&c));
    let m = json(manifest);
    assert!(m.get("threads").is_none());
    assert_eq!(m["options"]["trials"], 30);
}

#[test]
fn comass_of_a_symplectic_form() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["comass", "--config", &problem("comass.toml")], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v = json(dir.path().join("comass.json"))["value"].as_f64().unwrap();
    assert!((v - 1.0).abs() < 1e-8, "{}", v);
}

#[test]
fn report_collects_earlier_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    run(&["comass", "--config", &problem("comass.toml")], &runs);
    run(&["decompose", "--config", &problem("maxwell.toml")], &runs);
    let out = dir.path().join("report");
    let o = run(&["report", "--from", runs.to_str().unwrap()], &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.lines().count() >= 3, "{}", csv);
}
