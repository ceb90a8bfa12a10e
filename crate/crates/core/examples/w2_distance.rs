//! Empirical 2-Wasserstein distance between two one-node Gaussian sample
//! sets against the closed form, for equal and unequal sample counts.

use ndarray::Array2;
use rand_distr::{Distribution, Normal};
use sarmesh::eval::w2_distance;
use sarmesh::meshgraph::FieldState;
use sarmesh::numcore::rng::stream;

fn draws(seed: u64, mean: f64, std: f64, n: usize) -> Vec<FieldState> {
    let mut r = stream(seed, "w2_example", 0);
    let d = Normal::new(mean, std).unwrap();
    (0..n)
        .map(|_| FieldState::physical(Array2::from_elem((1, 1), d.sample(&mut r))))
        .collect()
}

fn main() {
    let (m1, s1, m2, s2) = (0.0, 1.0, 2.0, 0.5);
    let exact = ((m1 - m2) as f64).hypot(s1 - s2);
    for (na, nb) in [(100, 100), (400, 400), (300, 200)] {
        let w = w2_distance(&draws(1, m1, s1, na), &draws(2, m2, s2, nb)).unwrap();
        println!("{na:3} vs {nb:3}: W2 {w:.4} (closed form {exact:.4})");
    }
}
