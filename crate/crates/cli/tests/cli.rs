use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn steklov(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steklov"))
        .current_dir(dir)
        .env("STEKLOV_THREADS", "2")
        .args(args)
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().unwrap().split(';').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(';').nth(i).unwrap().to_string()).collect()
}

fn floats(v: &[String]) -> Vec<f64> {
    v.iter().map(|x| x.parse().unwrap()).collect()
}

#[test]
fn disk_spectrum_is_doubled_integers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "disk.toml", "m_max = 32\nn_max = 10\n[domain]\npreset = \"disk\"\n");
    let out = steklov(dir.path(), &["spectrum", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/spectrum.csv")).unwrap();
    assert!(csv.starts_with("# schema_version = 1\n# command = spectrum\n"));
    let lambda = floats(&column(&csv, "lambda"));
    for (got, want) in lambda.iter().zip([0.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0]) {
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
    }
    let tags = column(&csv, "multiplicity");
    assert_eq!(tags[0], "simple");
    assert_eq!(tags[1], "double");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/spectrum.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["data"]["m_max"], 32);
}

#[test]
fn annulus_first_nonzero_eigenvalue() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a.toml", "m_max = 64\nn_max = 8\n[domain]\npreset = \"annulus\"\neps = 0.5\n");
    let out = steklov(dir.path(), &["spectrum", "--config", cfg.to_str().unwrap(), "--out", "res"]);
    assert!(out.status.success());
    let lambda = floats(&column(&fs::read_to_string(dir.path().join("res/spectrum.csv")).unwrap(), "lambda"));
    assert!((lambda[1] - 0.4384471871911697).abs() < 1e-7, "{}", lambda[1]);
}

#[test]
fn overlapping_circles_exit_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(
        dir.path(),
        "bad.toml",
        "[domain]\nouter = { center = [0.0, 0.0], radius = 1.0 }\n\
         inners = [{ center = [0.2, 0.0], radius = 0.3 }, { center = [-0.2, 0.0], radius = 0.3 }]\n",
    );
    let out = steklov(dir.path(), &["spectrum", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("invalid domain") && err.contains("overlap"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn bad_truncation_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = steklov(dir.path(), &["spectrum", "--m-max", "100"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("power of two"));
}

#[test]
fn oversized_cluster_gap_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg =
        config(dir.path(), "e.toml", "cluster_eps = 5.0\nm_max = 32\nn_max = 10\n[domain]\npreset = \"disk\"\n");
    let out = steklov(dir.path(), &["quasimode", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("configuration error"));
}

#[test]
fn disk_quasimode_residuals_vanish() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "d.toml", "m_max = 64\nn_max = 24\n[domain]\npreset = \"disk\"\n");
    let out = steklov(dir.path(), &["quasimode", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/decomposition.csv")).unwrap();
    let f = floats(&column(&csv, "f_norm"));
    assert!(!f.is_empty());
    assert!(f.iter().all(|&x| x <= 1e-8), "{f:?}");
    let clusters = fs::read_to_string(dir.path().join("out/clusters.csv")).unwrap();
    assert!(column(&clusters, "i").len() > 1);
}

#[test]
fn outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a.toml", "m_max = 64\nn_max = 12\n[domain]\npreset = \"annulus\"\neps = 0.5\n");
    let c = cfg.to_str().unwrap();
    for out in ["one", "two"] {
        assert!(steklov(dir.path(), &["spectrum", "--config", c, "--out", out]).status.success());
        assert!(steklov(dir.path(), &["nodal", "--config", c, "--out", out, "--n", "5"]).status.success());
    }
    for f in ["spectrum.csv", "spectrum.json", "nodal_0005.json", "nodal_0005.svg"] {
        let a = fs::read(dir.path().join("one").join(f)).unwrap();
        let b = fs::read(dir.path().join("two").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
}

#[test]
fn constant_eigenfunction_has_empty_nodal_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "d.toml", "m_max = 32\nn_max = 6\n[domain]\npreset = \"disk\"\n");
    let out = steklov(dir.path(), &["nodal", "--config", cfg.to_str().unwrap(), "--n", "0"]);
    assert!(out.status.success());
    let svg = fs::read_to_string(dir.path().join("out/nodal_0000.svg")).unwrap();
    assert!(svg.contains(r#"viewBox="0 0 1000 1000""#));
    assert!(!svg.contains("<polyline"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/nodal_0000.json")).unwrap()).unwrap();
    assert_eq!(json["data"]["length"].as_f64(), Some(0.0));
    assert!(json["data"]["ratio"].is_null());
}

#[test]
fn nodal_requires_a_selection() {
    let dir = tempfile::tempdir().unwrap();
    let out = steklov(dir.path(), &["nodal", "--m-max", "32"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn disk_nodal_ratios_near_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "d.toml", "m_max = 32\nn_max = 8\n[domain]\npreset = \"disk\"\n");
    assert!(steklov(dir.path(), &["nodal", "--config", cfg.to_str().unwrap(), "--all"]).status.success());
    let csv = fs::read_to_string(dir.path().join("out/nodal_ratios.csv")).unwrap();
    let ratios = column(&csv, "ratio");
    assert_eq!(ratios[0], "");
    for r in floats(&ratios[1..]) {
        assert!((r - 2.0).abs() < 0.02, "{r}");
    }
}

#[test]
fn decay_profiles_cover_every_component() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "a.toml", "m_max = 64\nn_max = 12\n[domain]\npreset = \"annulus\"\neps = 0.5\n");
    assert!(steklov(dir.path(), &["decay", "--config", cfg.to_str().unwrap(), "--n", "9"]).status.success());
    let csv = fs::read_to_string(dir.path().join("out/decay.csv")).unwrap();
    let comps = column(&csv, "component");
    assert_eq!(comps.iter().filter(|c| *c == "0").count(), 8);
    assert_eq!(comps.iter().filter(|c| *c == "1").count(), 8);
    assert!(floats(&column(&csv, "sup")).iter().all(|s| s.is_finite() && *s >= 0.0));
}

#[test]
fn oracle_agrees_with_closed_form() {
    let dir = tempfile::tempdir().unwrap();
    let out = steklov(dir.path(), &["oracle", "--eps", "0.5", "--k-max", "6", "--m-max", "64", "--seed", "7"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/oracle.csv")).unwrap();
    let pass = column(&csv, "pass");
    assert_eq!(pass.len(), 12);
    assert!(pass.iter().all(|p| p == "true"));
}

#[test]
fn oracle_rejects_unreachable_modes() {
    let dir = tempfile::tempdir().unwrap();
    let out = steklov(dir.path(), &["oracle", "--k-max", "200", "--m-max", "32"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("raise m_max"));
}
