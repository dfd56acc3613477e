use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("configs")
        .join(name)
}

fn trapmodes(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trapmodes"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// CSV rows below the seed comment and the header.
fn rows(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# seed="));
    lines.skip(1).map(str::to_string).collect()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, body).unwrap();
    p
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn relax_single_ion() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("single_ion.json");
    ok(&trapmodes(
        &["relax", "--config", c.to_str().unwrap()],
        dir.path(),
    ));
    let orbit = read_json(&dir.path().join("orbit.json"));
    assert_eq!(orbit["stable"], Value::Bool(true));
    assert_eq!(orbit["seed"], Value::String("fixed".into()));
    assert!(!rows(&dir.path().join("trajectory.csv")).is_empty());
}

#[test]
fn modes_of_two_ions_are_reproducible() {
    let c = config("two_ion.json");
    let mut docs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        ok(&trapmodes(
            &[
                "modes",
                "--config",
                c.to_str().unwrap(),
                "--set",
                "horizon_periods=10",
            ],
            dir.path(),
        ));
        docs.push(fs::read(dir.path().join("modes.json")).unwrap());
        let m = read_json(&dir.path().join("modes.json"));
        assert_eq!(m["betas"].as_array().unwrap().len(), 6);
        assert!(m["max_oracle_deviation"].as_f64().unwrap() < 1e-8);
        assert!(m["reconstruction_error"]
            .as_array()
            .unwrap()
            .iter()
            .all(|e| e.as_f64().unwrap() < 1e-6));
        assert_eq!(rows(&dir.path().join("mode_directions.csv")).len(), 6 * 2);
    }
    assert_eq!(docs[0], docs[1]);
}

#[test]
fn evolve_with_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("two_ion.json");
    ok(&trapmodes(
        &[
            "evolve",
            "--config",
            c.to_str().unwrap(),
            "--seed",
            "5",
            "--set",
            "horizon_periods=20",
        ],
        dir.path(),
    ));
    let e = read_json(&dir.path().join("evolution.json"));
    assert_eq!(e["seed"], serde_json::json!(5));
    assert!(e["max_relative_error"].as_f64().unwrap() < 1e-6);
    assert!(fs::read_to_string(dir.path().join("gamma.csv"))
        .unwrap()
        .starts_with("# seed=5\n"));
}

#[test]
fn micromotion_from_a_saved_orbit() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("two_ion.json");
    ok(&trapmodes(
        &["relax", "--config", c.to_str().unwrap()],
        dir.path(),
    ));
    let orbit = dir.path().join("orbit.json");
    ok(&trapmodes(
        &[
            "micromotion",
            "--config",
            c.to_str().unwrap(),
            "--orbit",
            orbit.to_str().unwrap(),
        ],
        dir.path(),
    ));
    assert_eq!(rows(&dir.path().join("micromotion.csv")).len(), 2 * 3);
}

#[test]
fn unstable_single_ion_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("single_ion.json");
    let out = trapmodes(
        &[
            "modes",
            "--config",
            c.to_str().unwrap(),
            "--set",
            "a=0",
            "--set",
            "q=0.95",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    let m = read_json(&dir.path().join("modes.json"));
    assert_eq!(m["stable"], Value::Bool(false));
}

#[test]
fn bad_input_exits_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("single_ion.json");
    let c = c.to_str().unwrap();
    let missing = dir.path().join("nope.json");
    let broken = write_config(dir.path(), "{\"n_ions\": 2,");
    for args in [
        vec!["relax", "--config", c, "--set", "colour=blue"],
        vec!["relax", "--config", c, "--set", "q"],
        vec!["relax", "--config", c, "--set", "n_ions=0"],
        vec!["relax", "--config", missing.to_str().unwrap()],
        vec!["relax", "--config", broken.to_str().unwrap()],
        vec!["sweep", "--config", c, "--q-range", "0.1:0.2"],
        vec!["bounce", "--config", c],
    ] {
        let out = trapmodes(&args, dir.path());
        assert_eq!(
            out.status.code(),
            Some(4),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn one_point_sweep_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let c = config("single_ion.json");
    ok(&trapmodes(
        &[
            "sweep",
            "--config",
            c.to_str().unwrap(),
            "--a-range",
            "-0.01:-0.01:1",
            "--q-range",
            "0.3:0.3:1",
        ],
        dir.path(),
    ));
    let r = rows(&dir.path().join("sweep.csv"));
    assert_eq!(r.len(), 1);
    assert!(r[0].contains(",stable,"));
}

#[test]
fn hyperbolic_pair_loses_its_crystal_before_a_single_ion_destabilizes() {
    let dir = tempfile::tempdir().unwrap();
    let status = |n: usize| {
        let c = write_config(
            dir.path(),
            &format!("{{\"n_ions\": {n}, \"geometry\": \"hyperbolic\", \"a\": 0.15, \"q\": 0.4, \"omega_rf\": 10.0}}"),
        );
        ok(&trapmodes(
            &["sweep", "--config", c.to_str().unwrap()],
            dir.path(),
        ));
        rows(&dir.path().join("sweep.csv"))[0]
            .split(',')
            .nth(2)
            .unwrap()
            .to_string()
    };
    assert_eq!(status(1), "stable");
    assert_ne!(status(2), "stable");
}
