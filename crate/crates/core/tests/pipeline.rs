//! Whole-pipeline runs on simulated inputs.

use std::fs;
use std::path::Path;

use adlift::config::RunConfig;
use adlift::data::{write_ads, write_visits};
use adlift::pipeline::{manifest_status, run_pipeline};
use adlift::simulate::{simulate, AdPlan, Baseline, SimScenario};
use adlift::spread::SpreadSpec;
use adlift::Error;
use chrono::DateTime;

fn write_inputs(dir: &Path, seed: u64) {
    let scenario = SimScenario {
        n: 4320,
        start: DateTime::parse_from_rfc3339("2019-06-03T00:00:00+02:00").unwrap(),
        baseline: Baseline::Sinusoid {
            mean: 30.0,
            amplitude: 10.0,
            period: 1440.0,
            phase: 0.0,
        },
        ads: AdPlan::Random {
            count: 40,
            zero_prob: 0.3,
            theta_mean: 150.0,
            theta_shape: 2.0,
        },
        spread: SpreadSpec::weibull(0.32, 1.28).unwrap().with_cutoff(Some(30)).unwrap(),
        seed,
    };
    let (series, ads, _) = simulate(&scenario).unwrap();
    write_visits(dir.join("visits.csv"), &series).unwrap();
    write_ads(dir.join("ads.csv"), &series, &ads).unwrap();
}

fn config(dir: &Path, out: &str, extra: &str) -> RunConfig {
    let text = format!(
        r#"
seed = 11
[input]
visits = "visits.csv"
ads = "ads.csv"
output_dir = "{out}"
[smoother]
kernels = ["triangular", "epanechnikov"]
bandwidths = [4, 8, 12]
repeats = 5
[forest]
mtry = [2, 6]
min_node = [5]
sample_frac = [0.7]
n_trees = 40
tuning_repeats = 3
final_repeats = 2
pdp_points = 10
{extra}
"#
    );
    let path = dir.join(format!("{out}.toml"));
    fs::write(&path, text).unwrap();
    RunConfig::from_file(path).unwrap()
}

const ALL_FILES: [&str; 15] = [
    "cv_report.csv",
    "model_comparison.csv",
    "diagnostics_exponential.json",
    "diagnostics_weibull.json",
    "diagnostics_gamma.json",
    "diagnostics_gengamma.json",
    "thetas.csv",
    "rates.csv",
    "theta_density.csv",
    "tuning_grid.csv",
    "tuning_report.csv",
    "importance.csv",
    "pdp.csv",
    "quantiles.csv",
    "MANIFEST",
];

fn csv_rows(path: &Path) -> usize {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    reader.records().inspect(|r| assert!(r.is_ok())).count()
}

#[test]
fn all_stages_write_parseable_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path(), 4);
    let first = run_pipeline(&config(dir.path(), "a", "")).unwrap();
    let second = run_pipeline(&config(dir.path(), "b", "")).unwrap();
    assert_eq!(first.artifacts, second.artifacts);

    let out = dir.path().join("a");
    for name in ALL_FILES {
        assert!(out.join(name).exists(), "{name} missing");
        if name.ends_with(".csv") {
            assert!(csv_rows(&out.join(name)) > 0, "{name} empty");
        }
        if name.ends_with(".json") {
            let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(name)).unwrap()).unwrap();
            assert!(v["loglik"].as_f64().unwrap() < 0.0);
        }
        assert_eq!(fs::read(out.join(name)).unwrap(), fs::read(dir.path().join("b").join(name)).unwrap(), "{name} differs");
    }
    assert_eq!(csv_rows(&out.join("thetas.csv")), 40);
    assert_eq!(csv_rows(&out.join("cv_report.csv")), 6);
    assert_eq!(csv_rows(&out.join("model_comparison.csv")), 4);
    assert_eq!(csv_rows(&out.join("quantiles.csv")), 61);
    assert_eq!(csv_rows(&out.join("importance.csv")), 6);
    assert_eq!(csv_rows(&out.join("tuning_report.csv")), 5);
    assert_eq!(manifest_status(&out).unwrap(), "complete");
    let manifest = fs::read_to_string(out.join("MANIFEST")).unwrap();
    assert_eq!(manifest.lines().filter(|l| !l.starts_with('#')).count(), ALL_FILES.len() - 1);
    assert!(first.theta_family.is_some());
}

#[test]
fn forest_toggle_skips_forest_outputs() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path(), 5);
    let outcome = run_pipeline(&config(dir.path(), "c", "[stages]\nforest = false\nsmoother = false\n")).unwrap();
    let out = dir.path().join("c");
    for name in ["importance.csv", "pdp.csv", "tuning_report.csv", "cv_report.csv"] {
        assert!(!out.join(name).exists(), "{name} should be absent");
    }
    assert!(out.join("thetas.csv").exists());
    assert_eq!(outcome.smoother.bandwidth, 8);
}

#[test]
fn data_failure_leaves_failed_manifest() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path(), 6);
    // an ad past the end of the series
    let mut ads = fs::read_to_string(dir.path().join("ads.csv")).unwrap();
    ads.push_str("2019-06-09T00:00:00+02:00,m1,first,ch1\n");
    fs::write(dir.path().join("ads.csv"), ads).unwrap();
    let err = run_pipeline(&config(dir.path(), "d", "")).unwrap_err();
    assert!(matches!(err, Error::Range { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);
    assert!(manifest_status(dir.path().join("d")).unwrap().starts_with("failed in input"));
}

#[test]
fn forest_failure_keeps_earlier_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    write_inputs(dir.path(), 7);
    // keep only two ads so the forest cannot split 50/25/25
    let ads = fs::read_to_string(dir.path().join("ads.csv")).unwrap();
    let short: Vec<&str> = ads.lines().take(3).collect();
    fs::write(dir.path().join("ads.csv"), short.join("\n") + "\n").unwrap();
    let result = run_pipeline(&config(dir.path(), "e", "[stages]\nsmoother = false\n"));
    assert!(result.is_err());
    let out = dir.path().join("e");
    assert!(out.join("thetas.csv").exists());
    assert!(manifest_status(&out).unwrap().starts_with("failed in forest"));
    let manifest = fs::read_to_string(out.join("MANIFEST")).unwrap();
    assert!(manifest.contains("  thetas.csv"));
}
