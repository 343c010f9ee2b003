//! Instance generators shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use ndarray::{Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use mflabel::graph::WeightGraph;

/// Random positive rows summing to one.
pub fn random_assignment(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Array2<f64> {
    let mut a = Array2::from_shape_fn((n, k), |_| rng.random_range(0.05..1.0));
    for mut row in a.axis_iter_mut(Axis(0)) {
        let s = row.sum();
        row /= s;
    }
    a
}

/// `I - L / c` for the Laplacian `L` of a random connected weighted graph,
/// with `c` above the largest degree. The result is symmetric, stochastic,
/// irreducible and has a positive diagonal.
pub fn random_symmetric_stochastic(rng: &mut ChaCha8Rng, n: usize, extra_edge_prob: f64) -> WeightGraph {
    let mut w = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let j = rng.random_range(0..i);
        let v = rng.random_range(0.2..1.0);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        for j in i + 1..n {
            if w[(i, j)] == 0.0 && rng.random_bool(extra_edge_prob) {
                let v = rng.random_range(0.2..1.0);
                w[(i, j)] = v;
                w[(j, i)] = v;
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
    let c = deg.iter().cloned().fold(0.0, f64::max) * rng.random_range(1.05..2.0);
    let p = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 - deg[i] / c } else { w[(i, j)] / c });
    WeightGraph::from_dense(&p).expect("stochastic by construction")
}
