//! End-to-end runs of the compiled binary: frozen scalar outputs, config
//! file semantics, flag precedence, determinism of seeded outputs, and the
//! exit-code contract (2 for configuration faults, 1 for runtime faults).

// Frozen oracle constants keep every digit of their derivation.
#![allow(clippy::excessive_precision)]

use std::io::Write;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bosegas"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout should be utf-8")
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr should be utf-8")
}

/// Body lines of a JSON-lines document, skipping the timestamped header.
fn body_lines(out: &Output) -> Vec<String> {
    stdout_of(out).lines().skip(1).map(String::from).collect()
}

#[test]
fn dickman_point_value_matches_the_flat_segment() {
    let out = run(&["dickman", "--x", "0.5"]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let value: f64 = stdout_of(&out).trim().parse().expect("a single float");
    assert!(
        (value - 0.561459483566885170).abs() < 1e-9,
        "p(0.5) = {value}"
    );
}

#[test]
fn two_particle_free_partition_function_matches_the_closed_form() {
    let out = run(&[
        "partition", "--bc", "free", "--d", "3", "--beta", "1", "--L", "2", "--N", "2",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let value: f64 = stdout_of(&out).trim().parse().expect("a single float");
    assert!(
        (value - 0.218799698795381238).abs() < 1e-12,
        "Z_2 = {value}"
    );
}

#[test]
fn config_file_alone_drives_a_run_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("partition.conf");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "# two-particle free box").unwrap();
    writeln!(f, "bc = free").unwrap();
    writeln!(f, "d = 3").unwrap();
    writeln!(f, "beta = 1.0").unwrap();
    writeln!(f, "L = 2.0").unwrap();
    writeln!(f, "N = 2").unwrap();
    drop(f);
    let path_str = path.to_str().unwrap();

    let from_file = run(&["partition", "--config", path_str]);
    assert!(from_file.status.success(), "stderr: {}", stderr_of(&from_file));
    let z2: f64 = stdout_of(&from_file).trim().parse().unwrap();
    assert!((z2 - 0.218799698795381238).abs() < 1e-12);

    let overridden = run(&["partition", "--config", path_str, "--N", "1"]);
    assert!(overridden.status.success());
    let z1: f64 = stdout_of(&overridden).trim().parse().unwrap();
    assert!(z1 > z2, "Z_1 = {z1} should exceed Z_2 = {z2}");
}

#[test]
fn seeded_output_is_identical_across_runs_modulo_the_header() {
    let args = [
        "sample-loops", "--bc", "periodic", "--d", "3", "--beta", "1", "--L", "3",
        "--N", "16", "--samples", "200", "--seed", "42",
    ];
    let first = run(&args);
    let second = run(&args);
    assert!(first.status.success(), "stderr: {}", stderr_of(&first));
    assert!(second.status.success());
    let body_a = body_lines(&first);
    let body_b = body_lines(&second);
    assert!(!body_a.is_empty());
    assert_eq!(body_a, body_b);
    for line in &body_a {
        let parsed: serde_json::Value = serde_json::from_str(line).expect("valid JSON line");
        assert!(parsed.get("stat").is_some());
    }
    let header: serde_json::Value =
        serde_json::from_str(stdout_of(&first).lines().next().unwrap()).unwrap();
    assert_eq!(header["schema"], 1);
    assert_eq!(header["seed"], 42);
}

#[test]
fn different_seeds_change_the_sampled_body() {
    let base = [
        "sample-loops", "--bc", "periodic", "--d", "3", "--beta", "1", "--L", "3",
        "--N", "16", "--samples", "200",
    ];
    let mut args_a: Vec<&str> = base.to_vec();
    args_a.extend(["--seed", "42"]);
    let mut args_b: Vec<&str> = base.to_vec();
    args_b.extend(["--seed", "43"]);
    let a = run(&args_a);
    let b = run(&args_b);
    assert!(a.status.success() && b.status.success());
    assert_ne!(body_lines(&a), body_lines(&b));
}

#[test]
fn missing_seed_is_a_configuration_fault() {
    let out = run(&[
        "sample-loops", "--bc", "periodic", "--d", "3", "--beta", "1", "--L", "3",
        "--N", "16", "--samples", "200",
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("seed"), "stderr: {err}");
}

#[test]
fn malformed_config_line_is_reported_with_its_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.conf");
    std::fs::write(&path, "bc = free\nbeta 1.0\n").unwrap();
    let out = run(&["partition", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains(":2:"), "stderr: {err}");
    assert!(err.contains("key = value"), "stderr: {err}");
}

#[test]
fn unknown_config_key_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.conf");
    std::fs::write(&path, "x = 0.5\nwindow = 3\n").unwrap();
    let out = run(&["dickman", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("unknown key 'window'"), "stderr: {err}");
}

#[test]
fn invalid_parameter_value_is_a_configuration_fault() {
    let out = run(&["dickman", "--x=-1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("nonnegative"));
}

#[test]
fn selftest_switch_runs_the_backing_suite() {
    let out = run(&["traces", "--selftest"]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    assert!(text.contains("spectral/"), "stdout: {text}");
    assert!(text.contains("all 5 checks passed"), "stdout: {text}");
}

#[test]
fn out_flag_writes_the_document_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("profile.csv");
    let out = run(&[
        "rdm-profile", "--bc", "dirichlet", "--d", "3", "--beta", "1", "--L", "4",
        "--N", "10", "--points", "12", "--out", path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    assert!(stdout_of(&out).is_empty());
    let written = std::fs::read_to_string(&path).unwrap();
    let mut lines = written.lines();
    assert_eq!(lines.next(), Some("r,gamma"));
    assert_eq!(lines.count(), 12);
}

#[test]
fn free_energy_grid_is_monotone_in_density() {
    let out = run(&[
        "free-energy", "--d", "3", "--beta", "1", "--rho-min", "0.02", "--rho-max",
        "0.3", "--points", "8",
    ]);
    assert!(out.status.success(), "stderr: {}", stderr_of(&out));
    let text = stdout_of(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("rho,mu,free_energy"));
    let mus: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(mus.len(), 8);
    assert!(mus.windows(2).all(|w| w[1] >= w[0]));
    assert!(mus.last().copied().unwrap() <= 0.0);
}
