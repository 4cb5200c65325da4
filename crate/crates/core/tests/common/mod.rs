//! Shared helpers for integration tests.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use surfparc::graph::BrainGraph;

/// Random connected graph: a random spanning tree plus extra edges, with
/// weights in [0.5, 2).
pub fn random_connected_graph(n: usize, extra_edges: usize, seed: u64) -> BrainGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(usize, usize, f64)> = (1..n)
        .map(|i| (rng.gen_range(0..i), i, rng.gen_range(0.5..2.0)))
        .collect();
    let mut added = 0;
    while added < extra_edges {
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i != j {
            edges.push((i, j, rng.gen_range(0.5..2.0)));
            added += 1;
        }
    }
    BrainGraph::from_weighted_edges(n, edges).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
}

/// Random orthogonal matrix; a random sign flip keeps reflections in play.
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> nalgebra::DMatrix<f64> {
    let m = nalgebra::DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let mut q = m.qr().q();
    if rng.gen::<bool>() {
        for i in 0..d {
            q[(i, 0)] = -q[(i, 0)];
        }
    }
    q
}
