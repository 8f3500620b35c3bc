use std::path::Path;
use std::process::{Command, Output};

use eemsync::scenario::{ScenarioKind, BUNDLED};

fn eemsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eemsync")).args(args).output().unwrap()
}

fn manifest(dir: &Path, name: &str) -> serde_json::Value {
    let raw = std::fs::read_to_string(dir.join(name).join("manifest.json")).unwrap();
    serde_json::from_str(&raw).unwrap()
}

fn write_variant(dir: &Path, name: &str, edit: impl FnOnce(&mut serde_json::Value)) -> String {
    let raw = eemsync::scenario::bundled("determinate-kf").unwrap();
    let mut cfg: serde_json::Value = serde_json::from_str(raw).unwrap();
    cfg["name"] = name.into();
    edit(&mut cfg);
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn lists_every_scenario_kind() {
    let out = eemsync(&["list-scenarios"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for kind in ScenarioKind::ALL {
        assert!(text.contains(kind.name()), "{} missing from listing", kind.name());
    }
}

#[test]
fn bundled_configs_validate() {
    for (name, _) in BUNDLED {
        let out = eemsync(&["validate", name]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn all_bundled_scenarios_run_and_reproduce() {
    let tmp = tempfile::tempdir().unwrap();
    let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
    for round in ["a", "b"] {
        let dir = tmp.path().join(round);
        let mut args = vec!["run"];
        args.extend(&names);
        let dir_s = dir.to_string_lossy().into_owned();
        args.extend(["--out", &dir_s, "--horizon", "100000", "--jobs", "4"]);
        let out = eemsync(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in names {
        let a = manifest(&tmp.path().join("a"), name);
        let b = manifest(&tmp.path().join("b"), name);
        assert_eq!(a["status"], "complete", "{name}");
        assert_eq!(a["horizon"], 100000);
        assert!(!a["files"].as_array().unwrap().is_empty(), "{name} wrote no files");
        assert_eq!(a["files"], b["files"], "{name}: hashes differ between equal-seed runs");
    }
}

#[test]
fn seed_override_changes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().to_string_lossy().into_owned();
    for seed in ["1", "2"] {
        let out_dir = format!("{dir}/{seed}");
        let out = eemsync(&["run", "free-run", "--out", &out_dir, "--seed", seed, "--horizon", "1000"]);
        assert!(out.status.success());
    }
    let a = manifest(&tmp.path().join("1"), "free-run");
    let b = manifest(&tmp.path().join("2"), "free-run");
    assert_eq!(a["seed"], 1);
    assert_ne!(a["files"], b["files"]);
}

#[test]
fn invalid_config_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_variant(tmp.path(), "bad", |cfg| {
        cfg["model"].as_object_mut().unwrap().remove("sigma2");
        cfg["filter"]["weight"] = serde_json::json!(vec![0.09; 10]);
    });
    let out = eemsync(&["validate", &path]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("sigma2"), "{err}");
    let out = eemsync(&["run", &path, "--out", &tmp.path().to_string_lossy()]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(eemsync(&["validate", "no-such-scenario"]).status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_three_and_flags_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let path = write_variant(tmp.path(), "overflow", |cfg| {
        cfg["model"]["sigma1"][0] = 1e200.into();
    });
    let out_dir = tmp.path().join("out");
    let out = eemsync(&["run", &path, "--out", &out_dir.to_string_lossy(), "--horizon", "100"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&out_dir, "overflow");
    assert_eq!(m["status"], "partial");
    assert!(m["error"].as_str().unwrap().contains("numerical"));
}
