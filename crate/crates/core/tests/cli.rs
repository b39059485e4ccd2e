//! End-to-end checks of the command-line interface and its exit codes.

mod common;

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hjcanon"))
}

fn system(name: &str) -> PathBuf {
    common::systems_dir().join(name)
}

fn run(args: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.args(args);
    cmd.output().expect("binary runs")
}

#[test]
fn analyze_oscillator_exits_zero() {
    let out = run(&["analyze", system("oscillator.hjl").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("closed_first_class"));
    assert!(text.contains("generic rank 1"));
}

#[test]
fn analyze_s2_json_structure() {
    let out = run(&[
        "analyze",
        system("s2.hjl").to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).expect("valid json");
    assert_eq!(json["closure"]["status"], "closed_first_class");
    assert_eq!(json["closure"]["iterations"], 3);
    assert_eq!(json["rank"]["generic_rank"], 1);
    assert_eq!(json["rank"]["degenerate"][0], "q2");
    // constraints: primary + two chain additions
    assert_eq!(json["generators"].as_array().unwrap().len(), 4);
    assert_eq!(json["closure"]["additions"].as_array().unwrap().len(), 2);
    assert_eq!(json["reduced_coordinates"][0], "q1'");
    assert_eq!(json["reduced_momenta"][0], "p1_q1");
    // reproducibility header
    assert_eq!(json["tool"], "hjcanon");
    assert_eq!(json["flags"]["seed"], 42);
}

#[test]
fn analyze_cubic_is_unsupported() {
    let out = run(&["analyze", system("cubic.hjl").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyze_non_involutive_exits_three() {
    let out = run(&["analyze", system("noninv.hjl").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("non_involutive"));
}

#[test]
fn analyze_missing_file_is_parse_error() {
    let out = run(&["analyze", "/nonexistent/nope.hjl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn integrate_oscillator_csv() {
    let dir = std::env::temp_dir().join("hjcanon-cli-test");
    std::fs::create_dir_all(&dir).unwrap();
    let csv_path = dir.join("osc.csv");
    let out = run(&[
        "integrate",
        system("oscillator.hjl").to_str().unwrap(),
        "--init",
        "q=1,p=0",
        "--t-end",
        "10",
        "--dt",
        "1e-3",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "tau,t,q,p0_q,Z");
    let last = csv.lines().last().unwrap();
    let q_final: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert!((q_final - 10.0f64.cos()).abs() < 1e-6);
}

#[test]
fn integrate_s2_with_gauge_curve_reports_drift() {
    let out = run(&[
        "integrate",
        system("s2.hjl").to_str().unwrap(),
        "--init",
        "q1'=0.5,p1_q1=2",
        "--t-end",
        "2",
        "--dt",
        "1e-3",
        "--curve",
        "t02=0.5*tau^2",
        "--out",
        std::env::temp_dir()
            .join("hjcanon-s2.csv")
            .to_str()
            .unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{:?}", out);
    let text = String::from_utf8_lossy(&out.stdout);
    let drift_line = text
        .lines()
        .find(|l| l.starts_with("max constraint drift"))
        .expect("drift reported");
    let value: f64 = drift_line
        .rsplit(' ')
        .next()
        .unwrap()
        .parse()
        .expect("numeric drift");
    assert!(value <= 1e-8, "{drift_line}");
}

#[test]
fn integrate_violating_init_exits_three() {
    // the non-involutive chain pins q1 = 0; q1 = 1 contradicts it
    let out = run(&[
        "integrate",
        system("noninv.hjl").to_str().unwrap(),
        "--init",
        "q1=1",
        "--force",
    ]);
    assert_eq!(out.status.code(), Some(3), "{:?}", out);
}

#[test]
fn integrate_non_closed_without_force_exits_three() {
    let out = run(&["integrate", system("s3.hjl").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn propagate_free_particle_modulus() {
    let out = run(&[
        "propagate",
        system("free.hjl").to_str().unwrap(),
        "--x0",
        "0",
        "--x1",
        "1",
        "--t",
        "1",
        "--slices",
        "64",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let modulus: f64 = text
        .lines()
        .find(|l| l.starts_with("modulus"))
        .and_then(|l| l.rsplit(' ').next())
        .unwrap()
        .parse()
        .unwrap();
    assert!((modulus - 0.3989422804).abs() < 1e-9);
}

#[test]
fn propagate_caustic_exits_numeric_failure() {
    let out = run(&[
        "propagate",
        system("oscillator.hjl").to_str().unwrap(),
        "--t",
        "3.14159265358979",
        "--slices",
        "1000",
    ]);
    assert_eq!(out.status.code(), Some(4), "{:?}", out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("caustic"));
}

#[test]
fn propagate_singular_system_unsupported() {
    let out = run(&["propagate", system("s2.hjl").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn action_latex_output() {
    let out = run(&[
        "action",
        system("oscillator.hjl").to_str().unwrap(),
        "--format",
        "latex",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\\frac{1}{2} \\, p_{(0)1}^{2}"), "{text}");
    assert!(text.contains("\\exp i"));
}

#[test]
fn reduce_emits_reanalyzable_hjl() {
    let out = run(&["reduce", system("jet2.hjl").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    let spec = hjcanon::model::SystemSpec::parse_hjl(&text).expect("reduced output parses");
    assert_eq!(spec.k(), 1);
    assert_eq!(spec.n(), 3);
    assert!(hjcanon::model::validate_spec(&spec).is_valid());

    // the reduced Pais-Uhlenbeck system re-analyzes as first order
    let out = run(&["reduce", system("pu.hjl").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let dir = std::env::temp_dir().join("hjcanon-cli-test");
    std::fs::create_dir_all(&dir).unwrap();
    let reduced_path = dir.join("pu_reduced.hjl");
    std::fs::write(&reduced_path, out.stdout).unwrap();
    let out = run(&[
        "analyze",
        reduced_path.to_str().unwrap(),
        "--format",
        "json",
        "--force",
    ]);
    let json: serde_json::Value = serde_json::from_slice(&out.stdout).expect("valid json");
    assert_eq!(json["system"]["order"], 1);
}

#[test]
fn reduce_first_order_unsupported() {
    let out = run(&["reduce", system("oscillator.hjl").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn check_passes_on_closed_corpus() {
    for name in ["oscillator.hjl", "jet2.hjl", "s2.hjl", "pu.hjl"] {
        let out = run(&["check", system(name).to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(0), "{name}: {:?}", out);
        let text = String::from_utf8_lossy(&out.stdout);
        assert!(!text.contains("FAIL"), "{name}: {text}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    for name in ["s2.hjl", "pu.hjl", "noninv.hjl"] {
        let path = system(name);
        let args = [
            "analyze",
            path.to_str().unwrap(),
            "--format",
            "json",
            "--seed",
            "7",
        ];
        let a = run(&args);
        let b = run(&args);
        assert_eq!(a.stdout, b.stdout, "output differs for {name}");
    }
}
