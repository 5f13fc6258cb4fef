use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use invforge::cli::{parse_problem, parse_result, parse_result_str, write_result};
use invforge::sdp::{parse_sdpa, solve, SdpStatus, SolveOptions};
use invforge::synthesis::SynthesisStatus;
use nalgebra::DVector;

fn problems() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

fn invforge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_invforge"))
        .args(args)
        .output()
        .unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn unit_disc_end_to_end() {
    let out = tempfile::tempdir().unwrap();
    let sdpa = out.path().join("sdpa");
    let problem = problems().join("unit_disc.json");
    let o = invforge(&[
        "synth",
        path_str(&problem),
        "--out",
        path_str(out.path()),
        "--plots",
        "--export-sdpa",
        path_str(&sdpa),
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(String::from_utf8_lossy(&o.stdout).contains("status: Feasible"));

    let r = parse_result(&out.path().join("result.json")).unwrap();
    assert_eq!(r.status, SynthesisStatus::Feasible);
    let c = r.certificate.as_ref().unwrap();
    let trace = c.p[0][0] + c.p[1][1];
    assert!((trace - 2.0).abs() < 1e-7);
    assert!(c.l > 0.0 && c.zeta > 0.0);
    assert!(r.verification.as_ref().unwrap().passed);
    assert!(out.path().join("report.txt").exists());

    // every ellipse point lies in the unit disc
    let p = parse_problem(&problem).unwrap();
    for x in csv_rows(&out.path().join("ellipse.csv")) {
        assert!(p.safe_set.evaluate(&DVector::from_vec(x)) >= -1e-6);
    }
    for name in ["safeset.csv", "vector_field.csv", "u_levels.csv"] {
        assert!(out.path().join(name).exists(), "{name}");
    }

    // the stored certificate re-verifies from disk
    let result_path = out.path().join("result.json");
    let o = invforge(&["verify", path_str(&result_path), path_str(&problem)]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );

    // exported programs parse back and solve to the recorded values
    let first = fs::read_to_string(sdpa.join("ellipsoid_0.dat-s")).unwrap();
    let sol = solve(
        &parse_sdpa(&first).unwrap().to_problem(),
        &SolveOptions::default(),
    )
    .unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert!((sol.objective_value - r.history[0].l.unwrap()).abs() < 1e-6);
    let gain = fs::read_to_string(sdpa.join("gain_final.dat-s")).unwrap();
    let sol = solve(
        &parse_sdpa(&gain).unwrap().to_problem(),
        &SolveOptions::default(),
    )
    .unwrap();
    assert_eq!(sol.status, SdpStatus::Optimal);
    assert!((sol.objective_value - c.zeta * c.zeta).abs() < 1e-6 * c.zeta * c.zeta);
}

#[test]
fn tampered_certificate_is_rejected() {
    let out = tempfile::tempdir().unwrap();
    let problem = problems().join("unit_disc.json");
    let o = invforge(&["synth", path_str(&problem), "--out", path_str(out.path())]);
    assert_eq!(o.status.code(), Some(0));
    let mut r = parse_result(&out.path().join("result.json")).unwrap();
    let c = r.certificate.as_mut().unwrap();
    // a larger ellipsoid breaks the input bound
    c.l *= 1.5;
    let bad = out.path().join("tampered.json");
    fs::write(&bad, write_result(&r)).unwrap();
    let o = invforge(&["verify", path_str(&bad), path_str(&problem)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
}

#[test]
fn negative_control_exits_2() {
    let out = tempfile::tempdir().unwrap();
    let problem = problems().join("unstable_no_input.json");
    let o = invforge(&[
        "synth",
        path_str(&problem),
        "--out",
        path_str(out.path()),
        "--plots",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let r = parse_result(&out.path().join("result.json")).unwrap();
    assert_eq!(r.status, SynthesisStatus::ControlIneffective);
    assert!(!out.path().join("ellipse.csv").exists());
    let result_path = out.path().join("result.json");
    let o = invforge(&["verify", path_str(&result_path), path_str(&problem)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn off_center_example() {
    let out = tempfile::tempdir().unwrap();
    let problem = problems().join("damped_oscillator_offset.json");
    let o = invforge(&[
        "synth",
        path_str(&problem),
        "--out",
        path_str(out.path()),
        "--simulate",
        "20",
        "5",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let r = parse_result(&out.path().join("result.json")).unwrap();
    let v = r.verification.unwrap();
    assert!(v.containment_slack >= -1e-6);
    assert!(v.simulation.unwrap().passed);
}

#[test]
fn errors_exit_1() {
    let o = invforge(&["synth", "/nonexistent/problem.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!o.stderr.is_empty());
    let o = invforge(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    fs::write(&empty, "").unwrap();
    let o = invforge(&["synth", path_str(&empty), "--out", path_str(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("parse error"));

    let problem = problems().join("unit_disc.json");
    let o = invforge(&[
        "synth",
        path_str(&problem),
        "--zeta0",
        "-1",
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn runs_are_deterministic_and_overrides_apply() {
    let problem = problems().join("unit_disc.json");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = invforge(&[
            "synth",
            path_str(&problem),
            "--out",
            path_str(d.path()),
            "--max-iters",
            "1",
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let ra = fs::read_to_string(a.path().join("result.json")).unwrap();
    let rb = fs::read_to_string(b.path().join("result.json")).unwrap();
    assert_eq!(ra, rb);
    let r = parse_result_str(&ra).unwrap();
    assert_eq!(
        r.history.iter().filter(|h| h.kind == "alternation").count(),
        1
    );
}

#[test]
fn log_level_comes_from_environment() {
    let out = tempfile::tempdir().unwrap();
    let problem = problems().join("unit_disc.json");
    let o = Command::new(env!("CARGO_BIN_EXE_invforge"))
        .args(["synth", path_str(&problem), "--out", path_str(out.path())])
        .env("INVFORGE_LOG", "debug")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ellipsoid program"));
    let o = Command::new(env!("CARGO_BIN_EXE_invforge"))
        .args(["synth", path_str(&problem), "--out", path_str(out.path())])
        .env("INVFORGE_LOG", "error")
        .output()
        .unwrap();
    assert!(o.stderr.is_empty());
}
