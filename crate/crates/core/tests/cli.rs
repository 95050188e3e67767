//! The `adlift` binary: subcommands and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn adlift(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adlift")).args(args).current_dir(cwd).output().unwrap()
}

const SCENARIO: &str = r#"
n = 2880
seed = 3
start = "2019-06-03T00:00:00+02:00"
[baseline]
shape = "sinusoid"
mean = 30.0
amplitude = 10.0
[ads]
kind = "random"
count = 20
zero_prob = 0.3
theta_mean = 150.0
[spread]
family = "weibull"
alpha = 0.32
phi = 1.28
psi = 1.0
cutoff = 30
"#;

fn simulated(dir: &Path) {
    fs::write(dir.join("scenario.toml"), SCENARIO).unwrap();
    let out = adlift(&["simulate", "--scenario", "scenario.toml", "--out", "data"], dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn version_prints_package_version() {
    let out = adlift(&["version"], Path::new("."));
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), format!("adlift {}", env!("CARGO_PKG_VERSION")));
}

#[test]
fn simulate_then_quantiles() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    for name in ["visits.csv", "ads.csv", "truth.json"] {
        assert!(dir.path().join("data").join(name).exists());
    }
    let truth: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("data/truth.json")).unwrap()).unwrap();
    assert_eq!(truth["thetas"].as_array().unwrap().len(), 20);

    let out = adlift(
        &["quantiles", "--visits", "data/visits.csv", "--ads", "data/ads.csv", "--quantiles", "50,95", "--out", "q.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("q.csv")).unwrap();
    assert_eq!(text.lines().nth(1), Some("minute,n,q50,q95"));
    assert_eq!(text.lines().count(), 2 + 61);
}

#[test]
fn run_with_minimal_stages() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let config = r#"
seed = 1
[input]
visits = "data/visits.csv"
ads = "data/ads.csv"
output_dir = "out"
[stages]
smoother = false
forest = false
[decompose]
families = ["exponential", "weibull"]
"#;
    fs::write(dir.path().join("run.toml"), config).unwrap();
    let out = adlift(&["run", "--config", "run.toml"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("out/thetas.csv").exists());
    assert!(String::from_utf8(out.stdout).unwrap().contains("smoother: triangular h=8"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "seed = \"x\"\n").unwrap();
    assert_eq!(adlift(&["run", "--config", "bad.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(adlift(&["run", "--config", "absent.toml"], dir.path()).status.code(), Some(2));
    assert_eq!(adlift(&["frobnicate"], dir.path()).status.code(), Some(2));

    fs::write(dir.path().join("visits.csv"), "timestamp,visits\n2019-01-01T00:00:00Z,4\n2019-01-01T00:02:00Z,5\n").unwrap();
    fs::write(dir.path().join("ads.csv"), "end_time,motive,position,channel\n").unwrap();
    fs::write(dir.path().join("run.toml"), "seed = 1\n[input]\nvisits = \"visits.csv\"\nads = \"ads.csv\"\n").unwrap();
    let out = adlift(&["run", "--config", "run.toml"], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
