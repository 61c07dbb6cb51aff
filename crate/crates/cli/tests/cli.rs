use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use herald_core::model::{self, Detection};
use herald_core::{JsiParams, ModelParams};
use serde_json::Value;

fn herald(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_herald"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn herald")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = herald(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn curve_columns(path: impl AsRef<Path>) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn schmidt_number(dir: &Path, name: &str, extra: &[&str]) -> f64 {
    let mut args = vec!["jsi", "--out", name];
    args.extend_from_slice(extra);
    ok(dir, &args);
    json(dir.join(name).join("jsi_summary.json"))["schmidt_number"]
        .as_f64()
        .unwrap()
}

fn default_model() -> ModelParams {
    ModelParams {
        mu: 0.0,
        eta_i: 0.328,
        eta_s1: 0.1802,
        eta_s2: 0.221,
        k: 2.55,
        spectrum: herald_core::jsi::default_spectrum(),
    }
}

#[test]
fn jsi_schmidt_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let k = schmidt_number(dir.path(), "a", &[]);
    assert!((k - 20.6).abs() < 0.5, "{k}");
    let k_fine = schmidt_number(dir.path(), "b", &["--grid", "256"]);
    assert!((k_fine / k - 1.0).abs() < 0.02, "{k} vs {k_fine}");
    let k_sep = schmidt_number(dir.path(), "c", &["--separable"]);
    assert!((k_sep - 1.0).abs() < 1e-6, "{k_sep}");
    assert!(dir.path().join("a/spectrum.csv").exists());
}

#[test]
fn curve_summary_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["curve", "--out", "c"]);
    let s = json(dir.path().join("c/curve_summary.json"));
    let mu_thr = s["mu_at_target_threshold"].as_f64().unwrap();
    assert!((mu_thr / 4e-3 - 1.0).abs() < 0.15, "{mu_thr}");

    let params = default_model();
    let expected = model::mu_for_g2(7e-3, &params, Detection::Threshold).unwrap();
    assert!((mu_thr / expected - 1.0).abs() < 1e-9);
    let (_, gap) = model::max_g2_reduction(&params, 1e-4, 1.0).unwrap();
    let got = s["max_g2_reduction"].as_f64().unwrap();
    assert!((got - gap).abs() < 1e-9, "{got} vs {gap}");
}

#[test]
fn curve_without_tree_has_identical_columns() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &["curve", "--k", "0", "--points", "20", "--out", "c"],
    );
    for row in curve_columns(dir.path().join("c/curve.csv")) {
        // mu, g2_threshold, g2_pnr, g2_reduction, p_herald_threshold, p_herald_pnr
        assert!((row[1] - row[2]).abs() <= 1e-12 * row[1].abs(), "{row:?}");
        assert!(row[3].abs() < 1e-12, "{row:?}");
        assert!((row[4] - row[5]).abs() <= 1e-12 * row[4], "{row:?}");
    }
}

#[test]
fn povm_default_coefficients() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["povm", "--out", "p"]);
    let s = json(dir.path().join("p/povm_summary.json"));
    let eta_pnr = s["eta_pnr"].as_f64().unwrap();
    assert!((eta_pnr - 0.3608).abs() < 1e-3, "{eta_pnr}");
}

#[test]
fn simulate_then_count_matches_labels() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "simulate", "--mu", "0.3", "--pulses", "200000", "--seed", "9", "--format", "binary",
            "--labels", "--out", "s",
        ],
    );
    ok(
        dir.path(),
        &["count", "--input", "s/tags.bin", "--out", "s"],
    );
    let counts = json(dir.path().join("s/counts.json"));
    assert_eq!(counts["pulses"].as_u64(), Some(200_000));
    let labels = std::fs::read_to_string(dir.path().join("s/labels.csv")).unwrap();
    let heralded = labels
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(2).unwrap() != "0")
        .count() as u64;
    assert_eq!(counts["c_i_total"].as_u64(), Some(heralded));
}

#[test]
fn empty_input_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    let out = herald(dir.path(), &["count", "--input", "empty.csv", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    let out = herald(dir.path(), &["curve", "--points", "zero"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_efficiency_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = herald(dir.path(), &["curve", "--eta-i", "1.5", "--out", "c"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn replay_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "simulate", "--mu", "0.2", "--pulses", "50000", "--seed", "4", "--out", "a",
        ],
    );
    ok(
        d,
        &[
            "replay",
            "--manifest",
            "a/simulate.manifest.json",
            "--out",
            "b",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("a/tags.csv")).unwrap(),
        std::fs::read(d.join("b/tags.csv")).unwrap()
    );
    ok(d, &["curve", "--points", "12", "--out", "c"]);
    ok(
        d,
        &[
            "replay",
            "--manifest",
            "c/curve.manifest.json",
            "--out",
            "e",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("c/curve.csv")).unwrap(),
        std::fs::read(d.join("e/curve.csv")).unwrap()
    );
}

#[test]
fn command_line_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("cfg.txt"), "# sweep\npoints = 5\nmu_max = 0.5\n").unwrap();
    ok(
        d,
        &[
            "curve", "--config", "cfg.txt", "--points", "7", "--out", "c",
        ],
    );
    let rows = curve_columns(d.join("c/curve.csv"));
    assert_eq!(rows.len(), 7);
    assert!((rows.last().unwrap()[0] - 0.5).abs() < 1e-12);
}

#[test]
fn pipeline_defaults_finish_quickly() {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    ok(dir.path(), &["pipeline", "--out", "pl"]);
    assert!(start.elapsed() < Duration::from_secs(300));
    let fit = json(dir.path().join("pl/fit.json"));
    assert!(fit["fit"]["tree_depth"]["k"].as_f64().unwrap().is_finite());
    assert!(dir.path().join("pl/counts.json").exists());
    assert!(dir.path().join("pl/pipeline.manifest.json").exists());
}

#[test]
fn pipeline_recovers_parameters_with_enough_pulses() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "pipeline",
            "--fast",
            "--pulses",
            "100000000",
            "--pulses-low",
            "400000000",
            "--mus",
            "1e-3,2e-3,3e-3,4e-3,0.1,0.2,0.4,0.8",
            "--out",
            "pl",
        ],
    );
    let fit = &json(dir.path().join("pl/fit.json"))["fit"];
    let etas = &fit["efficiencies"];
    for (name, truth) in [("eta_i", 0.328), ("eta_s1", 0.1802), ("eta_s2", 0.221)] {
        let v = etas[name]["value"].as_f64().unwrap();
        assert!((v / truth - 1.0).abs() < 0.02, "{name} {v}");
    }
    let mus: Vec<f64> = fit["mus"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    for (got, truth) in mus[4..].iter().zip([0.1, 0.2, 0.4, 0.8]) {
        assert!((got / truth - 1.0).abs() < 0.02, "{got} vs {truth}");
    }
    let k = fit["tree_depth"]["k"].as_f64().unwrap();
    assert!((k - 2.55).abs() < 0.1, "{k}");
}

#[test]
fn jsi_defaults_match_library() {
    let dir = tempfile::tempdir().unwrap();
    let k = schmidt_number(dir.path(), "a", &[]);
    let lib = herald_core::jsi::schmidt_number(
        &herald_core::jsi::schmidt_decompose(
            &herald_core::jsi::synthesize_jsi(&JsiParams::default()).unwrap(),
            herald_core::jsi::DEFAULT_CUTOFF,
        )
        .unwrap(),
    );
    assert!((k - lib).abs() < 1e-9);
}
