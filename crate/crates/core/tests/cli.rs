use std::path::Path;
use std::process::{Command, Output};

use rand::Rng;

use conformal_fdp::envelope::{calibrate_envelope, Direction};
use conformal_fdp::io::{curve_from_csv, curve_to_csv, envelope_from_json, envelope_to_json, read_envelope};
use conformal_fdp::rng::{substream, Domain};
use conformal_fdp::{SamplerConfig, SummaryStatisticSpec};

fn run(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conformal-fdp"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn write_pvals(path: &Path, p: &[f64]) {
    let body: String = std::iter::once("p".to_string())
        .chain(p.iter().map(|v| v.to_string()))
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(path, body + "\n").unwrap();
}

#[test]
fn envelope_file_matches_library_and_round_trips_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "envelope", "--n", "100", "--m", "100", "--B", "100", "--delta", "0.1", "--stat", "thc", "--ell", "0.01",
            "--r", "0.99", "--beta", "0.5", "--seed", "11", "-o", "e.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = read_envelope(&dir.path().join("e.json")).unwrap();
    let from_file = doc.to_envelope().unwrap();
    assert!(from_file.cutoff().is_finite());

    let direct = calibrate_envelope(
        &SamplerConfig::conformal(100, 100, 100, 11),
        &SummaryStatisticSpec::thc_default(),
        0.1,
        Direction::Upper,
    )
    .unwrap();
    let again = envelope_from_json(&envelope_to_json(&doc).unwrap())
        .unwrap()
        .to_envelope()
        .unwrap();
    let mut rng = substream(5, Domain::Harness, 0);
    for _ in 0..1000 {
        let t: f64 = rng.random();
        assert_eq!(from_file.eval(t).to_bits(), direct.eval(t).to_bits());
        assert_eq!(again.eval(t).to_bits(), direct.eval(t).to_bits());
        assert_eq!(again.monotone_eval(t).to_bits(), direct.monotone_eval(t).to_bits());
    }
}

#[test]
fn bound_outlier_csv_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(
        &["envelope", "--n", "30", "--m", "6", "--B", "300", "--seed", "2", "--family", "-o", "fam.json"],
        dir.path()
    )
    .status
    .success());
    write_pvals(&dir.path().join("p.csv"), &[0.01, 0.2, 0.5, 0.03, 0.9, 0.04]);
    let out = run(
        &[
            "bound-outlier",
            "--pvals",
            "p.csv",
            "--envelope",
            "fam.json",
            "-o",
            "curve.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(dir.path().join("curve.csv")).unwrap();
    let curve = curve_from_csv(bytes.as_slice(), 0.1, None).unwrap();
    assert_eq!(curve_to_csv(&curve).unwrap(), bytes);
    for j in 0..curve.len() {
        assert!(curve.bound_combined[j] <= curve.bound_refined[j] && curve.bound_refined[j] <= curve.bound_naive[j]);
    }
}

#[test]
fn output_is_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(
        &["simulate-outlier", "--trials", "5", "--B", "200", "--seed", "9"],
        dir.path(),
    );
    let b = run(
        &["simulate-outlier", "--trials", "5", "--B", "200", "--seed", "9"],
        dir.path(),
    );
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(String::from_utf8_lossy(&a.stdout).contains("coverage"));
}

#[test]
fn missing_seed_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["envelope", "--n", "5", "--m", "5", "--B", "20"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed: "));
}

#[test]
fn exit_codes_distinguish_failures() {
    let dir = tempfile::tempdir().unwrap();
    // Bad delta is a configuration error.
    let out = run(
        &[
            "envelope", "--n", "5", "--m", "5", "--B", "20", "--delta", "1.5", "--seed", "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));

    // Envelope built for m = 6 applied to 3 p-values.
    assert!(run(
        &["envelope", "--n", "30", "--m", "6", "--B", "50", "--seed", "2", "--family", "-o", "fam.json"],
        dir.path()
    )
    .status
    .success());
    write_pvals(&dir.path().join("short.csv"), &[0.1, 0.2, 0.3]);
    let out = run(
        &["bound-outlier", "--pvals", "short.csv", "--envelope", "fam.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));

    std::fs::write(dir.path().join("bad.csv"), "p\n0.1\nabc\n").unwrap();
    let out = run(
        &[
            "bound-outlier",
            "--pvals",
            "bad.csv",
            "--n",
            "10",
            "--B",
            "50",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn variance_command_prints_exact_case() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["variance", "--n", "1", "--m", "1", "--t", "0.5"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().nth(1).unwrap().contains(",0.25"), "{text}");
}
