use stekit::verify::{run_suite, Suite};
use stekit::Precision;

#[test]
fn every_suite_passes() {
    for suite in Suite::ALL {
        let report = run_suite(suite, Precision::F64).unwrap();
        assert!(report.passed(), "{}", report.to_csv());
        assert!(!report.checks.is_empty());
    }
}

#[test]
fn determinism_holds_in_single_precision() {
    let report = run_suite(Suite::Determinism, Precision::F32).unwrap();
    assert!(report.passed(), "{}", report.to_csv());
}

#[test]
fn identity_reports_zero_deviation() {
    let report = run_suite(Suite::Identity, Precision::F64).unwrap();
    for c in report.checks.iter().filter(|c| !c.name.starts_with("locality")) {
        assert_eq!(c.measured, "0e0");
    }
}
