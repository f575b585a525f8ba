use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sparsefield::data::{decode_series, load_series, split_series, Format, SplitSpec};
use sparsefield::linear::{fit_principal_basis, reconstruct_linear};
use sparsefield::placement::{measure_matrix, Placement};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsefield"))
        .args(args)
        .current_dir(dir)
        .env_remove("SPARSEFIELD_THREADS")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn waves(dir: &Path, name: &str, components: &str) {
    ok(dir, &["synth", "--kind", "standing_waves", "--h", "8", "--w", "8", "--m", "40", "--seed", "1", "--components", components, "--out", name]);
}

#[test]
fn synth_writes_requested_header() {
    let d = tempfile::tempdir().unwrap();
    waves(d.path(), "s.sfgd", "2");
    let bytes = fs::read(d.path().join("s.sfgd")).unwrap();
    assert_eq!(&bytes[..4], b"SFGD");
    let s = decode_series(&bytes).unwrap();
    assert_eq!((s.grid().height, s.grid().width, s.len()), (8, 8, 40));
}

#[test]
fn synth_argument_errors() {
    let d = tempfile::tempdir().unwrap();
    let missing = run(d.path(), &["synth", "--h", "8", "--w", "8", "--m", "4"]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("--out"));
    let zero = run(d.path(), &["synth", "--h", "8", "--w", "8", "--m", "0", "--out", "x.sfgd"]);
    assert_eq!(code(&zero), 2);
    assert!(!d.path().join("x.sfgd").exists());
}

#[test]
fn qr_placement_recovers_rank_two_field() {
    let d = tempfile::tempdir().unwrap();
    waves(d.path(), "s.sfgd", "1");
    ok(d.path(), &["place", "--input", "s.sfgd", "--r", "2", "--out", "p.txt"]);
    let s = load_series(&d.path().join("s.sfgd"), Format::Binary).unwrap();
    let (train, test) = split_series(&s, SplitSpec::new(0.7).unwrap()).unwrap();
    let p = Placement::load(&d.path().join("p.txt")).unwrap();
    let basis = fit_principal_basis(&train, 2).unwrap();
    let truth = test.to_matrix();
    let recon = reconstruct_linear(&basis, &p, &measure_matrix(&p, &truth).unwrap()).unwrap();
    assert!(recon.sub(&truth).unwrap().max_abs() <= 1e-8);
}

#[test]
fn random_placement_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    waves(d.path(), "s.sfgd", "2");
    for out in ["a.txt", "b.txt"] {
        ok(d.path(), &["place", "--input", "s.sfgd", "--r", "5", "--strategy", "rand", "--seed", "9", "--out", out]);
    }
    let a = fs::read(d.path().join("a.txt")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b.txt")).unwrap());
}

#[test]
fn connectivity_report_and_bridges() {
    let d = tempfile::tempdir().unwrap();
    ok(d.path(), &["synth", "--h", "20", "--w", "20", "--m", "30", "--out", "s.sfgd"]);
    let text = ok(d.path(), &["place", "--input", "s.sfgd", "--r", "4", "--strategy", "rand", "--seed", "2", "--tau", "3", "--out", "p.txt"]);
    let first = text.lines().next().unwrap();
    let omega: usize = first.split("omega=").nth(1).unwrap().parse().unwrap();
    assert!(omega > 3, "placement should be dispersed: {first}");
    assert_eq!(first, format!("connected=false omega={omega}"));
    let before = Placement::load(&d.path().join("p.txt")).unwrap();

    let text = ok(d.path(), &["place", "--input", "s.sfgd", "--r", "4", "--strategy", "rand", "--seed", "2", "--tau", "3", "--bridge", "--out", "q.txt"]);
    assert!(text.contains("after: graph_connected=true"), "{text}");
    let after = Placement::load(&d.path().join("q.txt")).unwrap();
    assert!(after.len() > before.len());
    assert_eq!(&after.indices()[..4], before.indices());
}

#[test]
fn training_is_deterministic_and_logs_every_step() {
    let d = tempfile::tempdir().unwrap();
    waves(d.path(), "s.sfgd", "2");
    ok(d.path(), &["place", "--input", "s.sfgd", "--r", "4", "--out", "p.txt"]);
    for out in ["a.sfnr", "b.sfnr"] {
        ok(d.path(), &["train", "--input", "s.sfgd", "--placement", "p.txt", "--epochs", "4", "--batch-size", "8", "--seed", "3", "--out", out]);
    }
    let a = fs::read(d.path().join("a.sfnr")).unwrap();
    assert_eq!(a, fs::read(d.path().join("b.sfnr")).unwrap());
    let loss = fs::read_to_string(d.path().join("a.sfnr.loss.csv")).unwrap();
    let mut lines = loss.lines();
    assert_eq!(lines.next(), Some("step,loss"));
    // 28 training snapshots in batches of 8 → 4 steps per epoch
    assert_eq!(lines.count(), 4 * 4);
}

#[test]
fn evaluate_rows_and_identity_check() {
    let d = tempfile::tempdir().unwrap();
    waves(d.path(), "s.sfgd", "2");
    let identity = ok(d.path(), &["evaluate", "--input", "s.sfgd", "--r", "4", "--debug-identity"]);
    let rows: Vec<&str> = identity.lines().collect();
    assert_eq!(rows[0], "strategy,n_sensors,mse,var");
    let names: Vec<&str> = rows[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["qr+linear", "rand+linear", "qr+neural", "rand+neural"]);
    assert!(rows[1..].iter().all(|l| l.ends_with(",4,0.0,0.0")));

    let linear = ok(d.path(), &["evaluate", "--input", "s.sfgd", "--r", "4", "--linear-only", "--per-cell-dir", "cells"]);
    let qr_mse: f64 = linear.lines().nth(1).unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!(qr_mse <= 1e-12, "{linear}");
    let cells = fs::read_to_string(d.path().join("cells/qr_linear.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 64);
}

#[test]
fn evaluation_does_not_depend_on_thread_count() {
    let d = tempfile::tempdir().unwrap();
    waves(d.path(), "s.sfgd", "2");
    let args = ["evaluate", "--input", "s.sfgd", "--r", "3", "--epochs", "2", "--batch-size", "7", "--trials", "2"];
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = Command::new(env!("CARGO_BIN_EXE_sparsefield"))
            .args(args)
            .current_dir(d.path())
            .env("SPARSEFIELD_THREADS", threads)
            .output()
            .unwrap();
        assert!(out.status.success());
        outputs.push(out.stdout);
    }
    assert_eq!(outputs[0], outputs[1]);
    let bad = Command::new(env!("CARGO_BIN_EXE_sparsefield"))
        .args(args)
        .current_dir(d.path())
        .env("SPARSEFIELD_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&bad), 2);
}

#[test]
fn render_examples() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("g.csv"), "2,2\n0,1,0.5,0.25\n7,7,7,7\n").unwrap();
    ok(d.path(), &["render", "--input", "g.csv", "--out", "a.pgm"]);
    let a = fs::read(d.path().join("a.pgm")).unwrap();
    assert_eq!(&a[a.len() - 4..], &[0, 255, 128, 64]);

    ok(d.path(), &["render", "--input", "g.csv", "--snapshot", "1", "--out", "b.pgm"]);
    let b = fs::read(d.path().join("b.pgm")).unwrap();
    assert_eq!(&b[b.len() - 4..], &[128; 4]);

    fs::write(d.path().join("p.txt"), "1 2 2\n0\n").unwrap();
    ok(d.path(), &["render", "--input", "g.csv", "--snapshot", "1", "--placement", "p.txt", "--mark-sensors", "--out", "c.pgm"]);
    let c = fs::read(d.path().join("c.pgm")).unwrap();
    assert!(c.starts_with(b"P5\n2 2\n255\n"));
    assert_eq!(&c[c.len() - 4..], &[255, 128, 128, 128]);
}

#[test]
fn data_and_numerical_failures_have_distinct_codes() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.csv"), "2,2\n0,1,x,3\n").unwrap();
    let parse = run(d.path(), &["place", "--input", "bad.csv", "--r", "1", "--out", "p.txt"]);
    assert_eq!(code(&parse), 3);
    assert!(String::from_utf8_lossy(&parse.stderr).contains("bad.csv:2"));

    waves(d.path(), "s.sfgd", "1");
    let degenerate = run(d.path(), &["place", "--input", "s.sfgd", "--r", "3", "--out", "p.txt"]);
    assert_eq!(code(&degenerate), 4);
    assert!(String::from_utf8_lossy(&degenerate.stderr).contains("effective rank 2"));
}
