use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fuelgrid::gallery::oracle_instance;
use fuelgrid::solver::build_lattice;
use fuelgrid::verify::brute_force_value;

fn fuelgrid(mode: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fuelgrid"))
        .arg(mode)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_on_the_oracle_instance_matches_brute_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", r#"{"mode": "solve", "problem": {"gallery": "oracle"}}"#);
    let out = dir.path().join("out");
    let o = fuelgrid("solve", &cfg, &out, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["value.csv", "field.fgvf", "boundary.csv", "convergence.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let got = json(&out.join("convergence.json"))["value_at_start"].as_f64().unwrap();

    let g = oracle_instance();
    let (lat, tr) = build_lattice(&g.spec().unwrap(), &g.lattice).unwrap();
    let (s0, _) = lat.locate(&g.x0);
    let (j0, _) = lat.locate_fuel(g.z0);
    let want = brute_force_value(&lat, &tr, j0, s0).unwrap().value;
    assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
}

const ZERO_PAYOFF: &str = r#"{
  "problem": {
    "name": "zero",
    "horizon": 1.0,
    "dims": {"state": 1, "noise": 1, "action": 2},
    "drift": {"type": "affine", "offset": [0.0], "action_matrix": [[1.0, 0.0]]},
    "diffusion": {"type": "constant", "value": [[0.4]]},
    "action_set": [[0.5, 0.0], [-0.5, 0.0]],
    "fuel": {"mode": "finite", "zbar": 0.5}
  },
  "lattice": {"bounds": [[-1.0, 1.0]], "points": [9], "n_steps": 8},
  "x0": [0.0],
  "verify": {"n_paths": 2000, "random_policies": 20}
}"#;

#[test]
fn verify_with_zero_payoffs_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", ZERO_PAYOFF);
    let out = dir.path().join("out");
    let o = fuelgrid("verify", &cfg, &out, &["--seed", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let report = json(&out.join("report.json"));
    assert_eq!(report["passed"], true);
    assert!(report["tests"].as_array().unwrap().len() >= 6);
    assert!(fs::read_to_string(out.join("report.txt")).unwrap().contains("suite: pass"));
}

#[test]
fn missing_horizon_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let text = ZERO_PAYOFF.replace("\"horizon\": 1.0,", "");
    let cfg = write(dir.path(), "run.json", &text);
    let o = fuelgrid("solve", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("horizon"), "{err}");
    assert!(err.contains("config: problem"), "{err}");
}

#[test]
fn mode_mismatch_and_unknown_fields_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "a.json", r#"{"mode": "bench"}"#);
    assert_eq!(fuelgrid("solve", &cfg, &dir.path().join("o"), &[]).status.code(), Some(2));
    let cfg = write(dir.path(), "b.json", r#"{"seeds": 3}"#);
    let o = fuelgrid("bench", &cfg, &dir.path().join("o"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds"));
}

fn same_files(a: &Path, b: &Path, names: &[&str]) {
    for n in names {
        let x = fs::read(a.join(n)).unwrap();
        let y = fs::read(b.join(n)).unwrap();
        assert!(x == y, "{n} differs between runs");
    }
}

#[test]
fn identical_config_and_seed_give_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.json",
        r#"{"problem": {"gallery": "finite_fuel_follower"}, "simulation": {"n_paths": 300, "write_paths": 10}}"#,
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        assert!(fuelgrid("solve", &cfg, out, &[]).status.success());
        assert!(fuelgrid("simulate", &cfg, out, &["--seed", "11"]).status.success());
    }
    same_files(
        &a,
        &b,
        &["value.csv", "field.fgvf", "boundary.csv", "convergence.json", "paths.csv", "estimate.json", "m_trace.csv"],
    );

    let c = dir.path().join("c");
    assert!(fuelgrid("simulate", &cfg, &c, &["--seed", "12"]).status.success());
    assert_ne!(fs::read(a.join("paths.csv")).unwrap(), fs::read(c.join("paths.csv")).unwrap());

    let cfg = write(dir.path(), "v.json", ZERO_PAYOFF);
    for out in [&a, &b] {
        assert!(fuelgrid("verify", &cfg, out, &["--seed", "3"]).status.success());
    }
    let strip = |p: &Path| {
        let mut v = json(&p.join("report.json"));
        v.as_object_mut().unwrap().remove("metadata");
        v
    };
    assert_eq!(strip(&a), strip(&b));
    same_files(&a, &b, &["report.txt"]);
}

#[test]
fn saved_policy_replays_and_rejects_other_lattices() {
    let dir = tempfile::tempdir().unwrap();
    let solve_cfg = write(dir.path(), "s.json", r#"{"problem": {"gallery": "finite_fuel_follower"}, "output": "field"}"#);
    assert!(fuelgrid("solve", &solve_cfg, &dir.path().join("field"), &[]).status.success());

    let extracted = write(
        dir.path(),
        "e.json",
        r#"{"problem": {"gallery": "finite_fuel_follower"}, "simulation": {"n_paths": 200}}"#,
    );
    let replay = write(
        dir.path(),
        "r.json",
        r#"{"problem": {"gallery": "finite_fuel_follower"}, "policy": {"file": "field/field.fgvf"}, "simulation": {"n_paths": 200}}"#,
    );
    let (e, r) = (dir.path().join("e"), dir.path().join("r"));
    assert!(fuelgrid("simulate", &extracted, &e, &[]).status.success());
    let o = fuelgrid("simulate", &replay, &r, &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    same_files(&e, &r, &["paths.csv", "m_trace.csv"]);
    assert_eq!(json(&e.join("estimate.json"))["estimate"], json(&r.join("estimate.json"))["estimate"]);

    let other = write(
        dir.path(),
        "x.json",
        r#"{"problem": {"gallery": "finite_fuel_follower"}, "lattice": {"bounds": [[-2.0, 2.0]], "points": [9], "n_steps": 16},
            "policy": {"file": "field/field.fgvf"}}"#,
    );
    let o = fuelgrid("simulate", &other, &dir.path().join("x"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("policy:"));
}

#[test]
fn bench_writes_every_instance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "b.json", r#"{"simulation": {"n_paths": 100}, "bench": {"levels": 2}}"#);
    let out = dir.path().join("out");
    let o = fuelgrid("bench", &cfg, &out, &["--threads", "1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + fuelgrid::gallery::gallery().len());
    let refine = fs::read_to_string(out.join("refinement.csv")).unwrap();
    assert_eq!(refine.lines().count(), 1 + 2 * fuelgrid::gallery::gallery().len());
    let report = json(&out.join("bench.json"));
    assert_eq!(report["metadata"]["threads"], 1);
}
