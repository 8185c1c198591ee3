use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_volterra-exp");

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn exe(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn shipped_configs_validate() {
    for entry in fs::read_dir(configs()).unwrap() {
        let p = entry.unwrap().path();
        let out = exe(&["validate", p.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}: {}", p.display(), String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn by_parts_run_passes_and_repeats_byte_for_byte() {
    let cfg = configs().join("by_parts_oracle.json");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = exe(&["run", cfg.to_str().unwrap(), "--out", d.path().to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(dirs[0].path().join("by_parts.csv")).unwrap();
    let b = fs::read(dirs[1].path().join("by_parts.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dirs[0].path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["passed"], true);
    assert_eq!(manifest["config"]["experiment"], "by-parts-oracle");
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["metrics"]["max_discrepancy"].as_f64().unwrap() < 1e-12);
}

#[test]
fn overrides_change_output() {
    let cfg = configs().join("by_parts_oracle.json");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let cfg = cfg.to_str().unwrap();
    exe(&["run", cfg, "--out", dirs[0].path().to_str().unwrap(), "--replicas", "2"]);
    exe(&["run", cfg, "--out", dirs[1].path().to_str().unwrap(), "--replicas", "2", "--seed", "99"]);
    let a = fs::read_to_string(dirs[0].path().join("by_parts.csv")).unwrap();
    let b = fs::read_to_string(dirs[1].path().join("by_parts.csv")).unwrap();
    assert_eq!(a.lines().count(), 1 + 2 * 50);
    assert_ne!(a, b);
}

#[test]
fn config_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{\n  \"experiment\": \"lemma36\",\n  \"kernel\": {\"kind\": \"power\", \"rho\": 1.5}\n}\n");
    let out = exe(&["validate", &bad]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.json") && err.contains("(0,1)"), "{err}");

    let broken = write(dir.path(), "broken.json", "{\n  \"experiment\": \"lemma36\",\n  \"kernel\": \n}\n");
    let out = exe(&["run", &broken]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken.json:4:"));

    let frac = write(
        dir.path(),
        "frac.json",
        r#"{"experiment": "theorem3", "kernel": {"kind": "power", "rho": 0.25},
            "driver": {"kind": "cp-with-diffusion", "jump_intensity": 10, "diffusion_vol": 0.2}}"#,
    );
    let out = exe(&["validate", &frac]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Brownian"));

    let inc = write(
        dir.path(),
        "inc.json",
        r#"{"experiment": "smooth-variation", "kernel": {"kind": "power", "rho": 0.5}, "h_schedule": [1e-4, 1e-3, 1e-2]}"#,
    );
    assert_eq!(exe(&["run", &inc]).status.code(), Some(2));
}

#[test]
fn acceptance_failure_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "l35.json",
        r#"{"experiment": "lemma35", "kernel": {"kind": "power", "rho": 0.5}, "delta_schedule": [1e-2, 1e-3, 1e-4]}"#,
    );
    let out = exe(&["run", &cfg, "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("o/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["passed"], false);
}
