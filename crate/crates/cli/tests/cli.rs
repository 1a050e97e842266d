use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gaussflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaussflow")).args(args).output().expect("binary runs")
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn unknown_suite_is_a_usage_error() {
    let out = gaussflow(&["verify", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown suite"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"seed": 1, "sead": 2}"#);
    let out = gaussflow(&["--config", &cfg, "verify", "duality"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sead"));
}

#[test]
fn verify_duality_passes_and_embeds_config() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = gaussflow(&["--seed", "7", "--out", out_dir.to_str().unwrap(), "verify", "duality"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&out_dir);
    assert_eq!(r["command"], "verify");
    assert_eq!(r["pass"], true);
    assert_eq!(r["config"]["seed"], 7);
    assert_eq!(r["config"]["batch"]["seed"], 7);
    assert!(!r["checks"].as_array().unwrap().is_empty());
    assert!(out_dir.join("checks.csv").exists());
}

#[test]
fn same_seed_same_report() {
    let run = || gaussflow(&["--seed", "3", "verify", "spectral"]).stdout;
    assert_eq!(run(), run());
}

#[test]
fn verify_hodge_and_flow_density_defaults_pass() {
    for suite in ["hodge", "flow-density"] {
        let out = gaussflow(&["verify", suite]);
        assert_eq!(out.status.code(), Some(0), "{suite}: {}", String::from_utf8_lossy(&out.stderr));
        let r: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert!(r["config"]["field"].is_object(), "{suite}: default field recorded");
    }
}

#[test]
fn hodge_of_identity_field_is_a_gradient() {
    let dir = tempfile::tempdir().unwrap();
    let field = write(
        dir.path(),
        "id.json",
        r#"{"dim":2,"cap":3,"components":[
            {"dim":2,"cap":3,"terms":[{"alpha":[1,0],"c":1.0}]},
            {"dim":2,"cap":3,"terms":[{"alpha":[0,1],"c":1.0}]}]}"#,
    );
    let out_dir = dir.path().join("out");
    let out = gaussflow(&["--out", out_dir.to_str().unwrap(), "hodge", &field]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let bundle: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("bundle.json")).unwrap()).unwrap();
    for key in ["v0", "ve", "psi", "A"] {
        assert!(bundle.get(key).is_some(), "missing {key}");
    }
    let terms = bundle["psi"]["terms"].as_array().unwrap();
    assert_eq!(terms.len(), 2);
    for t in terms {
        assert!((t["c"].as_f64().unwrap() - 0.5f64.sqrt()).abs() < 1e-12);
    }
    for c in bundle["v0"]["components"].as_array().unwrap() {
        assert!(c["terms"].as_array().unwrap().iter().all(|t| t["c"].as_f64().unwrap().abs() < 1e-12));
    }
}

#[test]
fn flow_of_zero_field_is_identity_with_unit_density() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"field":{"kind":"closed_form","spec":{"name":"zero","dim":2}},
            "batch":{"N":50},"checks":["reversibility","mass"]}"#,
    );
    let out_dir = dir.path().join("out");
    let out = gaussflow(&["--config", &cfg, "--out", out_dir.to_str().unwrap(), "flow"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = csv_rows(&out_dir.join("trajectories.csv"));
    assert_eq!(traj.len(), 50 * 11);
    let start: Vec<&str> = traj[0].iter().skip(2).collect();
    let end: Vec<&str> = traj[10].iter().skip(2).collect();
    assert_eq!(start, end);
    for row in csv_rows(&out_dir.join("density.csv")) {
        assert_eq!(row[row.len() - 1].parse::<f64>().unwrap(), 1.0);
    }
}

#[test]
fn flow_without_field_is_an_error() {
    let out = gaussflow(&["flow"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn chaos_file_field_resolves_relative_to_config() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "rot.json",
        r#"{"dim":2,"cap":2,"components":[
            {"dim":2,"cap":2,"terms":[{"alpha":[0,1],"c":-1.0}]},
            {"dim":2,"cap":2,"terms":[{"alpha":[1,0],"c":1.0}]}]}"#,
    );
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"field":{"kind":"chaos_file","spec":"rot.json"},"batch":{"N":20},
            "checks":["group_law","galerkin","adapted"]}"#,
    );
    let out = gaussflow(&["--config", &cfg, "flow"]);
    assert_eq!(out.status.code(), Some(1), "rotation mixes coordinates, so adaptedness fails");
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    let checks = r["checks"].as_array().unwrap();
    let by_name = |n: &str| checks.iter().find(|c| c["name"] == n).unwrap()["pass"].as_bool().unwrap();
    assert!(by_name("group law"));
    assert!(by_name("Galerkin deviation monotone in m"));
    assert!(!by_name("field and flow adapted"));
    assert_eq!(r["config"]["field"]["kind"], "chaos");
}

#[test]
fn pde_default_rotation_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = gaussflow(&["--out", out_dir.to_str().unwrap(), "pde"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&out_dir.join("residuals.csv"));
    assert_eq!(rows.len(), 20);
    for r in rows {
        assert!(r[1].parse::<f64>().unwrap() <= 1e-6);
    }
}

#[test]
fn counterexample_demo_table() {
    let out = gaussflow(&["--format", "csv", "demo", "counterexample", "--m-max", "100", "--weights", "inverse"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_reader(out.stdout.as_slice());
    assert_eq!(rdr.headers().unwrap(), vec!["m", "h_norm_sq", "weighted_norm_sq"]);
    let rows: Vec<(usize, f64, f64)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap())
        })
        .collect();
    let last = rows.last().unwrap();
    assert_eq!(last.0, 100);
    assert!(rows.windows(2).all(|w| w[1].1 > w[0].1));
    assert!(last.1 > last.2);
}
