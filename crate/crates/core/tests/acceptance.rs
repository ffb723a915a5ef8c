//! End-to-end acceptance gate: one test (and one printed pass/fail line) per
//! shipped guarantee, each driven through the public suite runner.

use num_complex::Complex64;

use qklab::algebra::{make_element, AlgebraInstance, ElementInput, PExp};
use qklab::funcalc::kappa0;
use qklab::harness::{emit_report, run_suite, Format, SuiteConfig, SuiteReport};
use qklab::linalg::Mat;
use qklab::pnorm::distance;
use qklab::quasi::certify_idempotent;

fn cfg(suite: &str, trials: usize) -> SuiteConfig {
    let mut c = SuiteConfig::new(suite);
    c.trials = trials;
    c
}

fn run(c: &SuiteConfig) -> SuiteReport {
    run_suite(c).unwrap_or_else(|e| panic!("suite {} did not run: {e}", c.suite))
}

fn assert_clean(c: &SuiteConfig) -> SuiteReport {
    let rep = run(c);
    let bad: Vec<_> = rep
        .trials
        .iter()
        .filter(|r| r.status == qklab::harness::Status::Fail)
        .collect();
    assert!(bad.is_empty(), "suite {}: {} fail records, first: {:?}", c.suite, bad.len(), bad.first());
    rep
}

fn line(n: usize, what: &str) {
    println!("criterion {n:2}: {what}: PASS");
}

#[test]
fn criterion_01_norm_axioms_and_power_iteration() {
    for p in [PExp::ONE, PExp::TWO, PExp::Inf] {
        let mut c = cfg("axioms", 500);
        c.p = p;
        assert_clean(&c);
    }
    let mut c = cfg("boyd", 200);
    c.p = PExp::TWO;
    c.tol = 1e-6;
    assert_clean(&c);
    line(1, "norm axioms hold and the power iteration reaches the p=2 norm");
}

#[test]
fn criterion_02_homotopy_suites_recertify() {
    for suite in [
        "normest1", "normest2", "normest3", "orthsum", "pairpath", "invcomm", "simtohom1",
        "simtohom2",
    ] {
        // identity defects are measured at 65 samples inside the suites
        assert_clean(&cfg(suite, 200));
    }
    line(2, "homotopy suites re-certify with exact proof identities");
}

#[test]
fn criterion_03_close_idempotents_are_similar() {
    assert_clean(&cfg("closesim", 200));
    line(3, "close idempotents yield a certified similarity");
}

#[test]
fn criterion_04_riesz_projection_bounds() {
    let mut c = cfg("kappa0", 500);
    c.p = PExp::TWO;
    let rep = assert_clean(&c);
    assert!(
        rep.trials.iter().any(|r| r.check.contains("eigenprojection")),
        "oracle comparison never ran"
    );

    // an exact idempotent is a fixed point to 1e-10
    let alg = AlgebraInstance::interval_roe(4, PExp::TWO);
    let mut m = Mat::zeros(4, 4);
    m[(0, 0)] = Complex64::new(1.0, 0.0);
    m[(0, 2)] = Complex64::new(0.7, -0.2);
    m[(3, 3)] = Complex64::new(1.0, 0.0);
    let e = make_element(&alg, 1, ElementInput::Matrix(m)).unwrap();
    let cert = certify_idempotent(&e, None).unwrap();
    let riesz = kappa0(&e, &cert).unwrap();
    let d = distance(&riesz.output, &e).upper;
    assert!(d <= 1e-10, "fixed-point distance {d}");
    line(4, "spectral projections satisfy both bounds and fix exact inputs");
}

#[test]
fn criterion_05_index_map_on_band_and_cone_extensions() {
    // winding numbers -2..2 against the rank-based index oracle
    let rep = assert_clean(&cfg("boundary-toeplitz", 1));
    assert_eq!(rep.trials.len(), 5, "expected one record per winding in -2..=2");
    // liftable classes on the cone: boundary vanishes with the zero witness
    assert_clean(&cfg("boundary-cone", 100));
    line(5, "boundary matches the index oracle and kills liftable classes");
}

#[test]
fn criterion_06_split_boundary_and_naturality() {
    assert_clean(&cfg("boundary-split", 100));
    assert_clean(&cfg("naturality", 50));
    line(6, "split extensions have zero boundary, naturally in the algebra");
}

#[test]
fn criterion_07_two_window_factorization() {
    let mut c = cfg("mv-factor", 100);
    c.size = 64;
    let rep = assert_clean(&c);
    assert!(
        rep.trials.iter().any(|r| r.check.contains("shortcut")),
        "shortcut probe never ran"
    );
    line(7, "two-window factorization certifies all conclusions at n = 64");
}

#[test]
fn criterion_08_boundary_well_definedness() {
    let rep = assert_clean(&cfg("mv-meta", 50));
    assert!(
        rep.overflow >= 1,
        "undersized-overlap control must surface as overflow, got {:?}",
        rep.trials.last()
    );
    assert!(
        rep.trials
            .iter()
            .filter(|r| r.check.contains("undersized"))
            .all(|r| r.status == qklab::harness::Status::Overflow),
        "negative control passed instead of overflowing"
    );
    line(8, "boundary is stable under construction variations; bad overlap overflows");
}

#[test]
fn criterion_09_hilbert_space_bridge() {
    assert_clean(&cfg("cstar-bridge", 200));
    line(9, "p = 2 symmetrization preserves rank; polar decomposition is exact on unitaries");
}

#[test]
fn criterion_10_reports_are_deterministic() {
    for (suite, trials) in [("noop", 0), ("axioms", 20), ("closesim", 20), ("boundary-split", 5)] {
        let c = cfg(suite, trials);
        let a = emit_report(&run(&c), Format::Json);
        let b = emit_report(&run(&c), Format::Json);
        assert_eq!(a, b, "suite {suite} is not byte-stable");
        let ca = emit_report(&run(&c), Format::Csv);
        let cb = emit_report(&run(&c), Format::Csv);
        assert_eq!(ca, cb, "suite {suite} CSV is not byte-stable");
    }
    line(10, "identical seeds emit byte-identical reports");
}
