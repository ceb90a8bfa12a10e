mod support;

use support::{module_cases, primitive_cases, FD_TOL};

fn assert_all(cases: Vec<support::GradCase>) {
    for c in &cases {
        eprintln!("{:<32} checked {:>4}  rel err {:.2e}", c.name, c.checked, c.rel_err);
    }
    let bad: Vec<_> = cases.iter().filter(|c| !c.ok()).collect();
    assert!(bad.is_empty(), "finite-difference mismatch (tol {FD_TOL:e}): {bad:#?}");
}

#[test]
fn every_primitive_matches_central_differences() {
    assert_all(primitive_cases());
}

#[test]
fn layers_and_losses_match_central_differences() {
    assert_all(module_cases());
}
