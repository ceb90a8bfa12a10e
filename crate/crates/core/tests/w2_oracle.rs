mod support;

use ndarray::array;
use sarmesh::eval::{hungarian, transport_cost, w2_distance};
use sarmesh::meshgraph::FieldState;

#[test]
fn gaussian_closed_form_within_five_percent() {
    let (worst, exact) = support::w2_gaussian_oracle();
    assert!(worst < 0.05, "worst relative deviation {worst} from {exact}");
}

#[test]
fn metric_axioms() {
    let v = support::w2_axiom_violation();
    assert!(v < 1e-9, "violation {v}");
}

#[test]
fn three_by_three_assignment_by_enumeration() {
    let c = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
    let a = hungarian(&c);
    let best = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]]
        .iter()
        .map(|p| (0..3).map(|i| c[[i, p[i]]]).sum::<f64>())
        .fold(f64::INFINITY, f64::min);
    assert_eq!((0..3).map(|i| c[[i, a[i]]]).sum::<f64>(), best);
    assert_eq!(best, 5.0);
}

#[test]
fn unbalanced_transport_splits_mass() {
    // One source of mass 1 against two sinks of mass 1/2: cost is the mean.
    let c = array![[1.0, 3.0]];
    assert!((transport_cost(&c) - 2.0).abs() < 1e-12);
}

#[test]
fn point_sets_shifted_by_a_constant() {
    let a: Vec<_> = (0..6).map(|i| FieldState::physical(array![[i as f64]])).collect();
    let b: Vec<_> = (0..6).map(|i| FieldState::physical(array![[i as f64 + 0.5]])).collect();
    assert!((w2_distance(&a, &b).unwrap() - 0.5).abs() < 1e-12);
}
