//! The ten acceptance criteria at full sample sizes. Each test prints its
//! records and one summary line; records marked as known gaps are reported
//! but do not fail the test.

use std::io::Write;
use std::sync::OnceLock;

use sbm_core::harness::{Lab, Report, Scale, Tolerances};

const SEED: u64 = 20261015;

fn lab() -> &'static Lab {
    static LAB: OnceLock<Lab> = OnceLock::new();
    LAB.get_or_init(|| {
        let scratch = std::path::Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
        Lab::new(SEED, Scale::Full, Tolerances::default(), scratch)
    })
}

// libtest captures print! output of passing tests; a direct write to stderr
// keeps the lines in the log either way
fn say(line: &str) {
    let _ = writeln!(std::io::stderr().lock(), "{line}");
}

fn check(c: u8, title: &str) {
    let mut rep = Report::new("acceptance", SEED);
    rep.extend(lab().criterion(c).unwrap_or_else(|e| panic!("criterion {c} could not run: {e}")));
    for r in &rep.records {
        say(&r.line());
    }
    let gaps = rep.records.iter().filter(|r| r.known_gap && !r.pass).count();
    let status = match (rep.gating_pass(), gaps) {
        (false, _) => "FAIL".to_string(),
        (true, 0) => "PASS".to_string(),
        (true, g) => format!("PASS ({g} known-gap record(s) failing)"),
    };
    say(&format!("criterion {c} ({title}): {status}"));
    assert!(rep.gating_pass(), "criterion {c} failed");
}

#[test]
fn criterion_01_kernel_exactness() {
    check(1, "kernel exactness");
}

#[test]
fn criterion_02_log_laplace() {
    check(2, "log-Laplace solver, Laplace functional, blow-up profile");
}

#[test]
fn criterion_03_moments() {
    check(3, "moment recursion vs oracle and Monte Carlo");
}

#[test]
fn criterion_04_poisson_representation() {
    check(4, "Poisson cluster representation and extinction");
}

#[test]
fn criterion_05_harmonicity() {
    check(5, "extended X-harmonicity");
}

#[test]
fn criterion_06_density() {
    check(6, "density property by reweighting");
}

#[test]
fn criterion_07_fragmentation_kernel() {
    check(7, "fragmentation-kernel algebra");
}

#[test]
fn criterion_08_potential_equation() {
    check(8, "potential equation for gamma");
}

#[test]
fn criterion_09_backbone() {
    check(9, "backbone and forest vs brute force");
}

#[test]
fn criterion_10_determinism() {
    check(10, "determinism and merge invariance");
}
