use std::fs;
use std::path::Path;
use std::process::Command;

use mtcp::runner::RunManifest;

fn mtcp(config: &Path, args: &[&str], workers: Option<&str>) -> std::process::Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mtcp"));
    cmd.arg("run").arg(config).args(args);
    match workers {
        Some(w) => cmd.env("MTCP_WORKERS", w),
        None => cmd.env_remove("MTCP_WORKERS"),
    };
    cmd.output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> std::path::PathBuf {
    let out = dir.join("out");
    let path = dir.join("run.toml");
    fs::write(&path, format!("output_dir = {:?}\n{body}", out.to_str().unwrap())).unwrap();
    path
}

const SURVIVAL: &str = r#"
experiment = "survival"
seed = 42
replicas = 300
lambda2 = 1.8
horizon = 20.0

[topology]
kind = "torus"
d = 1
extent = 80

[params]
sites = [0, 1]
rho_t = 5.0
"#;

#[test]
fn duality_check_passes_with_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "experiment = \"duality-check\"\nseed = 1\nreplicas = 10000\n");
    let out = mtcp(&cfg, &[], None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert!(manifest.passed);
    let csv = fs::read_to_string(dir.path().join("out/duality-check.csv")).unwrap();
    assert_eq!(csv.lines().count(), 10_001);
}

#[test]
fn inverted_rates_are_rejected_before_any_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SURVIVAL);
    let out = mtcp(&cfg, &["--set", "lambda1=2.5"], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda1"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn malformed_configs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        "experiment = \"nope\"\nseed = 1\n",
        "experiment = \"survival\"\nseed = 1\n",
        "experiment = \"survival\"\nseed = 1\nlambda2 = 1.0\n[topology]\nkind = \"torus\"\nextent = 2\n",
        "experiment = \"survival\"\nseed = 1\nlambda2 = 1.0\n[topology]\nkind = \"torus\"\nextent = 9\n[params]\nsites = [\"(99)\"]\n",
    ] {
        let cfg = write_config(dir.path(), bad);
        let out = mtcp(&cfg, &[], None);
        assert_eq!(out.status.code(), Some(2), "config {bad:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
    let out = mtcp(&dir.path().join("missing.toml"), &[], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flagged_violations_exit_three_with_outputs() {
    let dir = tempfile::tempdir().unwrap();
    // An impossible tolerance forces a flag.
    let body = r#"
experiment = "oracle-compare"
seed = 3
replicas = 200
lambda1 = 0.8
lambda2 = 1.6

[topology]
kind = "path"
extent = 3

[initial]
states = "120"

[params]
max_tv = 0.0
"#;
    let cfg = write_config(dir.path(), body);
    let out = mtcp(&cfg, &[], None);
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("out/oracle-compare.csv").exists());
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn outputs_are_identical_across_worker_counts_and_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SURVIVAL);
    let csv = dir.path().join("out/survival.csv");
    let mut seen = Vec::new();
    for workers in ["1", "4", "1"] {
        let out = mtcp(&cfg, &[], Some(workers));
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        seen.push(fs::read(&csv).unwrap());
    }
    assert!(seen.windows(2).all(|w| w[0] == w[1]));
    let manifest: RunManifest =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.workers, 1);
}

#[test]
fn rerunning_from_a_manifest_reproduces_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SURVIVAL);
    assert_eq!(mtcp(&cfg, &["--set", "seed=5"], None).status.code(), Some(0));
    let manifest_path = dir.path().join("out/manifest.json");
    let first: RunManifest = serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    let copy = dir.path().join("saved.json");
    fs::copy(&manifest_path, &copy).unwrap();
    fs::remove_dir_all(dir.path().join("out")).unwrap();
    assert_eq!(mtcp(&copy, &[], None).status.code(), Some(0));
    let second: RunManifest = serde_json::from_str(&fs::read_to_string(&manifest_path).unwrap()).unwrap();
    assert_eq!(first.config.seed, 5);
    assert_eq!(first.config, second.config);
    assert_eq!(first.outputs, second.outputs);
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let config = mtcp::runner::load_config(&path, &[]).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        mtcp::runner::validate(&config).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 11);
}
