//! Acceptance suite. One test per criterion; each prints a PASS line with
//! its measured numbers when it succeeds. Criteria share a lock so timing
//! measurements are not distorted by parallel test execution.

mod common;

use std::sync::Mutex;
use std::time::Instant;

use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use surfparc::align::{icp_align, ICP_MAX_ITERS, ICP_TOL};
use surfparc::eigen::{dense_eig, smallest_eigenpairs, EigenOptions};
use surfparc::embedding::{spectral_coordinates, SpectralEmbedding};
use surfparc::graph::{AdjacencyMode, BrainGraph};
use surfparc::laplacian::build_laplacian;
use surfparc::net::{
    backward, forward, grid_conv_1d, ConvGraph, LayerParams, NetworkConfig, NetworkParams,
};
use surfparc::synth::generate_synthetic_surface;

static CRITERION_LOCK: Mutex<()> = Mutex::new(());

fn run_exclusive(f: impl FnOnce()) {
    let _guard = CRITERION_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    f();
}

/// Relative error with an absolute floor: near-zero gradients are compared
/// absolutely at the 1e-4 scale, everything else relatively.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-4)
}

#[test]
fn criterion_1_gradient_correctness() {
    run_exclusive(|| {
        let start = Instant::now();
        let n = 30;
        let classes = 4;
        let graph = common::random_connected_graph(n, 45, 101);
        let mut rng = ChaCha8Rng::seed_from_u64(102);
        let coords = common::random_matrix(n, 3, &mut rng);
        let features = common::random_matrix(n, 4, &mut rng);
        let labels: Vec<i64> = (0..n).map(|_| rng.gen_range(0..classes) as i64).collect();
        let conv = ConvGraph::new(&graph, &coords).unwrap();

        let config = NetworkConfig {
            n_classes: classes,
            seed: 103,
            ..NetworkConfig::default()
        };
        let mut params = NetworkParams::init(&config).unwrap();

        let cache = forward(&params, &features, &conv).unwrap();
        let (_, _, grads) = backward(&params, &conv, &cache, &labels, false).unwrap();

        let h = 1e-5;
        let mut checked = 0usize;
        let mut max_err = 0.0f64;
        let fd_loss = |params: &NetworkParams| -> f64 {
            let cache = forward(params, &features, &conv).unwrap();
            surfparc::net::cross_entropy(&cache.probs, &labels).unwrap().0
        };

        for l in 0..3 {
            enum Kind {
                W,
                B,
                Mu,
                LogSigma,
            }
            for kind in [Kind::W, Kind::B, Kind::Mu, Kind::LogSigma] {
                let len = match kind {
                    Kind::W => params.layers[l].w.len(),
                    Kind::B => params.layers[l].b.len(),
                    Kind::Mu => params.layers[l].mu.len(),
                    Kind::LogSigma => params.layers[l].log_sigma.len(),
                };
                for idx in 0..len {
                    let get_set = |params: &mut NetworkParams, delta: f64| match kind {
                        Kind::W => params.layers[l].w.as_slice_mut().unwrap()[idx] += delta,
                        Kind::B => params.layers[l].b.as_slice_mut().unwrap()[idx] += delta,
                        Kind::Mu => params.layers[l].mu.as_slice_mut().unwrap()[idx] += delta,
                        Kind::LogSigma => {
                            params.layers[l].log_sigma.as_slice_mut().unwrap()[idx] += delta
                        }
                    };
                    let analytic = match kind {
                        Kind::W => grads.layers[l].w.as_slice().unwrap()[idx],
                        Kind::B => grads.layers[l].b.as_slice().unwrap()[idx],
                        Kind::Mu => grads.layers[l].mu.as_slice().unwrap()[idx],
                        Kind::LogSigma => grads.layers[l].log_sigma.as_slice().unwrap()[idx],
                    };
                    get_set(&mut params, h);
                    let plus = fd_loss(&params);
                    get_set(&mut params, -2.0 * h);
                    let minus = fd_loss(&params);
                    get_set(&mut params, h);
                    let numeric = (plus - minus) / (2.0 * h);
                    let err = rel_err(analytic, numeric);
                    assert!(
                        err <= 1e-4,
                        "layer {l} param {idx}: analytic {analytic:.10e} vs fd {numeric:.10e} (rel {err:.3e})"
                    );
                    max_err = max_err.max(err);
                    checked += 1;
                }
            }
        }
        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 60.0, "gradient check took {secs:.1}s");
        println!(
            "criterion 1 PASS: {checked} gradients, max rel err {max_err:.3e}, {secs:.1}s"
        );
    });
}

#[test]
fn criterion_2_eigensolver_oracle() {
    run_exclusive(|| {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(200);
        let mut worst_gap = 0.0f64;
        for trial in 0..50 {
            let n = rng.gen_range(20..=500);
            let extra = rng.gen_range(0..2 * n);
            let graph = common::random_connected_graph(n, extra, 1000 + trial);
            let lap = build_laplacian(&graph).unwrap();
            let k = 4.min(n - 1);
            let opts = EigenOptions {
                seed: trial,
                ..EigenOptions::default()
            };
            let iterative = smallest_eigenpairs(&lap, k, &opts).unwrap();
            let dense = dense_eig(&lap).unwrap();
            for (a, b) in iterative.values.iter().zip(&dense.values) {
                let gap = (a - b).abs();
                assert!(gap < 1e-6, "trial {trial}: iterative {a} vs dense {b}");
                worst_gap = worst_gap.max(gap);
            }
            for &v in &iterative.values {
                assert!(
                    (-1e-8..=2.0 + 1e-8).contains(&v),
                    "trial {trial}: eigenvalue {v} outside [0, 2]"
                );
            }
        }
        // 3-path spectrum is {0, 1, 2} exactly.
        let path = BrainGraph::from_weighted_edges(3, vec![(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
        let lap = build_laplacian(&path).unwrap();
        let pairs = smallest_eigenpairs(&lap, 2, &EigenOptions::default()).unwrap();
        for (got, want) in pairs.values.iter().zip([0.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-8, "3-path: {got} vs {want}");
        }
        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 120.0, "eigensolver oracle took {secs:.1}s");
        println!("criterion 2 PASS: 50 graphs, worst |iterative-dense| {worst_gap:.3e}, {secs:.1}s");
    });
}

fn subject_embedding(seed: u64, n_vertices: usize) -> SpectralEmbedding {
    let mesh = generate_synthetic_surface(seed, n_vertices, 8, 0.3).unwrap();
    let graph = BrainGraph::from_mesh(&mesh, AdjacencyMode::MeshEdges).unwrap();
    let lap = build_laplacian(&graph).unwrap();
    let pairs = smallest_eigenpairs(
        &lap,
        3,
        &EigenOptions {
            seed,
            ..EigenOptions::default()
        },
    )
    .unwrap();
    spectral_coordinates(&pairs, 3).unwrap()
}

#[test]
fn criterion_3_alignment_recovery() {
    run_exclusive(|| {
        let start = Instant::now();
        let reference = subject_embedding(300, 2562);
        let n = reference.n();
        let mut rng = ChaCha8Rng::seed_from_u64(301);
        let mut worst_dist = 0.0f64;
        let mut worst_rec = 0.0f64;
        for trial in 0..20 {
            let q = common::random_orthogonal(3, &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let mut coords = Array2::zeros((n, 3));
            for (row, &p) in perm.iter().enumerate() {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for i in 0..3 {
                        acc += reference.coords[(p, i)] * q[(i, j)];
                    }
                    coords[(row, j)] = acc;
                }
            }
            let moved = SpectralEmbedding {
                eigenvalues: reference.eigenvalues.clone(),
                coords,
                aligned: false,
            };
            let (res, _) = icp_align(&moved, &reference, ICP_MAX_ITERS, ICP_TOL).unwrap();
            assert!(
                res.final_distance <= 1e-6,
                "trial {trial}: mean NN distance {}",
                res.final_distance
            );
            let rq = res.transform_matrix() * &q;
            let rec = (rq - nalgebra::DMatrix::<f64>::identity(3, 3)).norm();
            assert!(rec <= 1e-6, "trial {trial}: ||R*Q - I|| = {rec}");
            worst_dist = worst_dist.max(res.final_distance);
            worst_rec = worst_rec.max(rec);
        }
        let secs = start.elapsed().as_secs_f64();
        assert!(secs < 120.0, "alignment recovery took {secs:.1}s");
        println!(
            "criterion 3 PASS: 20/20 trials, worst NN dist {worst_dist:.3e}, worst ||RQ-I|| {worst_rec:.3e}, {secs:.1}s"
        );
    });
}

#[test]
fn criterion_4_grid_equivalence() {
    run_exclusive(|| {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(400);
        let len = 16;
        let mut worst = 0.0f64;
        for trial in 0..10 {
            let q_dim = rng.gen_range(1..=3);
            let p_dim = rng.gen_range(1..=4);
            let signal = common::random_matrix(len, q_dim, &mut rng);
            let w = Array3::from_shape_fn((p_dim, q_dim, 3), |_| rng.gen_range(-1.0..1.0));
            let b = Array1::from_shape_fn(p_dim, |_| rng.gen_range(-1.0..1.0));

            let grid = grid_conv_1d(&signal, &w, &b, 1);

            // Path graph with integer line positions; kernels as indicators
            // of the offsets -1, 0, +1.
            let graph = BrainGraph::from_weighted_edges(
                len,
                (0..len - 1).map(|i| (i, i + 1, 1.0)).collect(),
            )
            .unwrap();
            let coords = Array2::from_shape_fn((len, 1), |(i, _)| i as f64);
            let conv = ConvGraph::new(&graph, &coords).unwrap();
            let layer = LayerParams {
                w: w.clone(),
                b: b.clone(),
                mu: Array2::from_shape_fn((3, 1), |(k, _)| k as f64 - 1.0),
                log_sigma: Array1::from_elem(3, 40.0f64.ln()),
            };
            let z = surfparc::net::layer_forward(&layer, &conv, &signal);

            for (a, g) in z.iter().zip(grid.iter()) {
                let err = (a - g).abs();
                assert!(err < 1e-6, "trial {trial}: graph {a} vs grid {g}");
                worst = worst.max(err);
            }
        }
        let secs = start.elapsed().as_secs_f64();
        println!("criterion 4 PASS: 10 draws, worst |graph-grid| {worst:.3e}, {secs:.1}s");
    });
}
