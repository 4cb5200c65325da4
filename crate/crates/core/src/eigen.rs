//! Smallest eigenpairs of the normalized Laplacian.
//!
//! The iterative path is block inverse iteration: each outer step solves
//! L y = x per block column with conjugate gradients (deflated against the
//! known null vector, preconditioned with a shifted incomplete Cholesky),
//! then extracts Ritz pairs from the block. A dense decomposition capped at
//! N <= 2000 serves as the independent oracle.

use nalgebra::DMatrix;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::laplacian::{CsrMatrix, LaplacianMatrix};

/// Eigenvalues below this threshold count as the trivial null pair.
pub const TRIVIAL_EIGENVALUE: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct EigenOptions {
    /// Residual tolerance ||L u - lambda u||.
    pub tol: f64,
    /// Outer iteration cap.
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            tol: 1e-6,
            max_iters: 5000,
            seed: 0,
        }
    }
}

/// Eigenpairs in ascending order, trivial pair included as entry 0.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    /// One column per pair, matching `values`.
    pub vectors: Vec<Vec<f64>>,
    pub iterations: usize,
    pub worst_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Removes the component along the unit vector `u`.
fn project_out(x: &mut [f64], u: &[f64]) {
    let c = dot(x, u);
    for (xi, ui) in x.iter_mut().zip(u) {
        *xi -= c * ui;
    }
}

/// Flips a vector so its entry of largest magnitude (first on ties) is
/// positive. Keeps solver output deterministic across runs.
pub fn canonical_sign(v: &mut [f64]) {
    let mut best = 0usize;
    let mut best_abs = 0.0f64;
    for (i, &x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

/// Incomplete Cholesky factor with the sparsity of the lower triangle.
struct Ic0 {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    values: Vec<f64>,
    diag: Vec<f64>,
}

impl Ic0 {
    /// Factors A + shift*I; returns None on pivot breakdown.
    fn factor(a: &CsrMatrix, shift: f64) -> Option<Ic0> {
        let n = a.n;
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx: Vec<u32> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut diag = vec![0.0f64; n];

        for i in 0..n {
            row_ptr[i] = col_idx.len();
            let row = a.row_ptr[i]..a.row_ptr[i + 1];
            let mut a_ii = shift;
            for k in row.clone() {
                let j = a.col_idx[k] as usize;
                if j == i {
                    a_ii += a.values[k];
                }
            }
            for k in row {
                let j = a.col_idx[k] as usize;
                if j >= i {
                    continue;
                }
                // s = A[i][j] - sum over common columns < j of row i and row j.
                let mut s = a.values[k];
                let (mut pi, mut pj) = (row_ptr[i], row_ptr[j]);
                let (ei, ej) = (col_idx.len(), row_ptr[j + 1]);
                while pi < ei && pj < ej {
                    match col_idx[pi].cmp(&col_idx[pj]) {
                        std::cmp::Ordering::Less => pi += 1,
                        std::cmp::Ordering::Greater => pj += 1,
                        std::cmp::Ordering::Equal => {
                            if (col_idx[pi] as usize) < j {
                                s -= values[pi] * values[pj];
                            }
                            pi += 1;
                            pj += 1;
                        }
                    }
                }
                let l_ij = s / diag[j];
                col_idx.push(j as u32);
                values.push(l_ij);
            }
            let mut d = a_ii;
            for k in row_ptr[i]..col_idx.len() {
                d -= values[k] * values[k];
            }
            if d <= 1e-12 {
                return None;
            }
            diag[i] = d.sqrt();
        }
        row_ptr[n] = col_idx.len();
        Some(Ic0 {
            n,
            row_ptr,
            col_idx,
            values,
            diag,
        })
    }

    /// z = (L L^T)^{-1} r.
    fn solve(&self, r: &[f64], z: &mut [f64]) {
        // Forward: L y = r.
        for i in 0..self.n {
            let mut s = r[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s -= self.values[k] * z[self.col_idx[k] as usize];
            }
            z[i] = s / self.diag[i];
        }
        // Backward: L^T z = y.
        for i in (0..self.n).rev() {
            z[i] /= self.diag[i];
            let zi = z[i];
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                z[self.col_idx[k] as usize] -= self.values[k] * zi;
            }
        }
    }
}

/// Deflated preconditioned CG for L x = b with x, b orthogonal to `v0`.
/// Returns the iterate when the relative residual drops below `tol` or the
/// iteration cap is reached.
#[allow(clippy::too_many_arguments)]
fn solve_deflated_pcg(
    a: &CsrMatrix,
    prec: Option<&Ic0>,
    v0: &[f64],
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iters: usize,
    scratch: &mut PcgScratch,
) -> Vec<f64> {
    let n = a.n;
    let mut x = x0.to_vec();
    project_out(&mut x, v0);

    let r = &mut scratch.r;
    let z = &mut scratch.z;
    let p = &mut scratch.p;
    let ap = &mut scratch.ap;

    a.mul_vec(&x, ap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
    }
    project_out(r, v0);
    let b_norm = norm(b).max(f64::MIN_POSITIVE);

    let apply_prec = |r: &[f64], z: &mut Vec<f64>| match prec {
        Some(m) => m.solve(r, z),
        None => z.copy_from_slice(r),
    };
    apply_prec(r, z);
    project_out(z, v0);
    p.copy_from_slice(z);
    let mut rz = dot(r, z);

    for _ in 0..max_iters {
        if norm(r) <= tol * b_norm {
            break;
        }
        a.mul_vec(p, ap);
        let p_ap = dot(p, ap);
        if p_ap <= 0.0 {
            break;
        }
        let alpha = rz / p_ap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        project_out(r, v0);
        apply_prec(r, z);
        project_out(z, v0);
        let rz_new = dot(r, z);
        if rz_new.abs() <= f64::MIN_POSITIVE {
            break;
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}

struct PcgScratch {
    r: Vec<f64>,
    z: Vec<f64>,
    p: Vec<f64>,
    ap: Vec<f64>,
}

impl PcgScratch {
    fn new(n: usize) -> Self {
        PcgScratch {
            r: vec![0.0; n],
            z: vec![0.0; n],
            p: vec![0.0; n],
            ap: vec![0.0; n],
        }
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand::Rng;
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Returns the k+1 smallest eigenpairs (trivial pair first) of a connected
/// graph's normalized Laplacian. Deterministic given the seed.
pub fn smallest_eigenpairs(
    lap: &LaplacianMatrix,
    k: usize,
    opts: &EigenOptions,
) -> Result<EigenPairs> {
    let n = lap.n();
    if k + 1 > n {
        return Err(Error::InvalidArg(format!(
            "requested {} pairs from an {n}-node graph",
            k + 1
        )));
    }

    if lap.is_zero() {
        // Identity adjacency: L = 0, every vector is an eigenvector.
        let mut vectors = Vec::with_capacity(k + 1);
        for j in 0..=k {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            vectors.push(e);
        }
        return Ok(EigenPairs {
            values: vec![0.0; k + 1],
            vectors,
            iterations: 0,
            worst_residual: 0.0,
        });
    }

    let v0 = lap.null_vector();
    if k == 0 {
        let mut v = v0;
        canonical_sign(&mut v);
        return Ok(EigenPairs {
            values: vec![0.0],
            vectors: vec![v],
            iterations: 0,
            worst_residual: 0.0,
        });
    }

    let a = &lap.matrix;
    let m = (k + 1).min(n - 1); // one guard column steadies the tail of the block
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let max_diag = (0..n)
        .map(|i| {
            (a.row_ptr[i]..a.row_ptr[i + 1])
                .filter(|&p| a.col_idx[p] as usize == i)
                .map(|p| a.values[p])
                .sum::<f64>()
        })
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let mut prec = None;
    let mut shift = 1e-8 * max_diag;
    for _ in 0..4 {
        if let Some(f) = Ic0::factor(a, shift) {
            prec = Some(f);
            break;
        }
        shift *= 100.0;
    }

    let mut draw_column = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| standard_normal(rng)).collect()
    };
    let mut block: Vec<Vec<f64>> = Vec::with_capacity(m);
    for _ in 0..m {
        let mut col = draw_column(&mut rng);
        project_out(&mut col, &v0);
        block.push(col);
    }
    orthonormalize(&mut block, &v0, &mut rng, &mut draw_column);

    let mut theta = vec![0.0f64; m];
    let mut worst = f64::INFINITY;
    let mut scratch = PcgScratch::new(n);
    let mut iterations = 0;
    let cg_cap = 4 * n + 200;

    for outer in 1..=opts.max_iters {
        iterations = outer;
        // Inner accuracy tracks the current subspace error.
        let tol_inner = (0.05 * worst).clamp(1e-10, 1e-2);
        for j in 0..m {
            let warm: Vec<f64> = if theta[j] > 1e-10 {
                block[j].iter().map(|x| x / theta[j]).collect()
            } else {
                vec![0.0; n]
            };
            block[j] = solve_deflated_pcg(
                a,
                prec.as_ref(),
                &v0,
                &block[j],
                &warm,
                tol_inner,
                cg_cap,
                &mut scratch,
            );
        }
        orthonormalize(&mut block, &v0, &mut rng, &mut draw_column);

        // Rayleigh-Ritz on the block.
        let mut a_block: Vec<Vec<f64>> = Vec::with_capacity(m);
        for col in &block {
            let mut out = vec![0.0; n];
            a.mul_vec(col, &mut out);
            a_block.push(out);
        }
        let mut t = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in i..m {
                let v = dot(&block[i], &a_block[j]);
                t[(i, j)] = v;
                t[(j, i)] = v;
            }
        }
        let eig = nalgebra::SymmetricEigen::new(t);
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));

        let mut rotated = vec![vec![0.0f64; n]; m];
        let mut rotated_a = vec![vec![0.0f64; n]; m];
        for (slot, &src) in order.iter().enumerate() {
            theta[slot] = eig.eigenvalues[src];
            for i in 0..m {
                let c = eig.eigenvectors[(i, src)];
                if c != 0.0 {
                    for (r, (bi, abi)) in block[i].iter().zip(&a_block[i]).enumerate() {
                        rotated[slot][r] += c * bi;
                        rotated_a[slot][r] += c * abi;
                    }
                }
            }
        }
        block = rotated;

        worst = 0.0f64;
        for j in 0..k {
            let mut res2 = 0.0;
            for r in 0..n {
                let d = rotated_a[j][r] - theta[j] * block[j][r];
                res2 += d * d;
            }
            worst = worst.max(res2.sqrt());
        }
        if worst <= opts.tol {
            break;
        }
    }

    if worst > opts.tol {
        return Err(Error::EigenNonConvergence {
            max_iters: opts.max_iters,
            worst_residual: worst,
        });
    }

    let mut values = Vec::with_capacity(k + 1);
    let mut vectors = Vec::with_capacity(k + 1);
    values.push(0.0);
    let mut v0s = v0.clone();
    canonical_sign(&mut v0s);
    vectors.push(v0s);
    for j in 0..k {
        values.push(theta[j]);
        let mut v = block[j].clone();
        canonical_sign(&mut v);
        vectors.push(v);
    }
    Ok(EigenPairs {
        values,
        vectors,
        iterations,
        worst_residual: worst,
    })
}

/// Modified Gram-Schmidt against `v0` and within the block; columns that
/// collapse are redrawn from the RNG.
fn orthonormalize(
    block: &mut [Vec<f64>],
    v0: &[f64],
    rng: &mut ChaCha8Rng,
    draw: &mut impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
) {
    let m = block.len();
    for j in 0..m {
        loop {
            project_out(&mut block[j], v0);
            for i in 0..j {
                let (head, tail) = block.split_at_mut(j);
                let c = dot(&tail[0], &head[i]);
                for (x, y) in tail[0].iter_mut().zip(&head[i]) {
                    *x -= c * y;
                }
            }
            let nrm = norm(&block[j]);
            if nrm > 1e-12 {
                for x in block[j].iter_mut() {
                    *x /= nrm;
                }
                break;
            }
            block[j] = draw(rng);
        }
    }
}

/// Full dense eigendecomposition, ascending. Test oracle; capped at 2000.
pub fn dense_eig(lap: &LaplacianMatrix) -> Result<EigenPairs> {
    let n = lap.n();
    if n > 2000 {
        return Err(Error::InvalidArg(format!(
            "dense oracle capped at 2000 nodes, got {n}"
        )));
    }
    let dense = lap.matrix.to_dense();
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (dense[(i, j)] + dense[(j, i)]));
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let mut values = Vec::with_capacity(n);
    let mut vectors = Vec::with_capacity(n);
    for &src in &order {
        values.push(eig.eigenvalues[src]);
        let mut col: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, src)]).collect();
        canonical_sign(&mut col);
        vectors.push(col);
    }
    Ok(EigenPairs {
        values,
        vectors,
        iterations: 0,
        worst_residual: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::BrainGraph;
    use crate::laplacian::build_laplacian;

    fn path_graph(n: usize) -> LaplacianMatrix {
        let edges = (0..n - 1).map(|i| (i, i + 1, 1.0)).collect();
        build_laplacian(&BrainGraph::from_weighted_edges(n, edges).unwrap()).unwrap()
    }

    #[test]
    fn two_node_spectrum() {
        let lap = path_graph(2);
        let pairs = smallest_eigenpairs(&lap, 1, &EigenOptions::default()).unwrap();
        assert!(pairs.values[0].abs() < 1e-10);
        assert!((pairs.values[1] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn three_path_spectrum() {
        let lap = path_graph(3);
        let pairs = smallest_eigenpairs(&lap, 2, &EigenOptions::default()).unwrap();
        let expect = [0.0, 1.0, 2.0];
        for (got, want) in pairs.values.iter().zip(expect) {
            assert!((got - want).abs() < 1e-8, "got {got}, want {want}");
        }
    }

    #[test]
    fn dense_oracle_three_path() {
        let lap = path_graph(3);
        let pairs = dense_eig(&lap).unwrap();
        let expect = [0.0, 1.0, 2.0];
        for (got, want) in pairs.values.iter().zip(expect) {
            assert!((got - want).abs() < 1e-10);
        }
    }

    #[test]
    fn null_space_eigenvector_matches_degrees() {
        let g = BrainGraph::from_weighted_edges(
            6,
            vec![
                (0, 1, 0.7),
                (1, 2, 1.3),
                (2, 3, 0.4),
                (3, 4, 2.2),
                (4, 5, 1.0),
                (0, 5, 0.6),
                (1, 4, 0.9),
            ],
        )
        .unwrap();
        let lap = build_laplacian(&g).unwrap();
        let pairs = smallest_eigenpairs(&lap, 2, &EigenOptions::default()).unwrap();
        assert!(pairs.values[0].abs() < 1e-8);
        let v0 = lap.null_vector();
        let got = &pairs.vectors[0];
        // Same direction up to sign; canonical sign makes it equal.
        let dot_abs = dot(got, &v0).abs();
        assert!((dot_abs - 1.0).abs() < 1e-10);
    }

    #[test]
    fn residuals_and_orthonormality() {
        let g = BrainGraph::from_weighted_edges(
            12,
            (0..11)
                .map(|i| (i, i + 1, 1.0 + 0.1 * i as f64))
                .chain([(0, 11, 0.5), (2, 9, 0.8)])
                .collect(),
        )
        .unwrap();
        let lap = build_laplacian(&g).unwrap();
        let pairs = smallest_eigenpairs(&lap, 3, &EigenOptions::default()).unwrap();
        for (j, v) in pairs.vectors.iter().enumerate() {
            let mut lv = vec![0.0; 12];
            lap.matrix.mul_vec(v, &mut lv);
            let res: f64 = lv
                .iter()
                .zip(v)
                .map(|(a, b)| (a - pairs.values[j] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(res <= 1e-6, "pair {j} residual {res}");
            for w in &pairs.vectors[..j] {
                assert!(dot(v, w).abs() < 1e-6);
            }
            assert!((norm(v) - 1.0).abs() < 1e-9);
        }
        // Spectrum bound for the normalized Laplacian.
        for &v in &pairs.values {
            assert!((-1e-8..=2.0 + 1e-8).contains(&v));
        }
    }

    #[test]
    fn zero_matrix_identity_adjacency() {
        use crate::graph::AdjacencyMode;
        use crate::mesh::SurfaceMesh;
        let mesh = SurfaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
            vec![0.0; 3],
            None,
        )
        .unwrap();
        let g = BrainGraph::from_mesh(&mesh, AdjacencyMode::Identity).unwrap();
        let lap = build_laplacian(&g).unwrap();
        let pairs = smallest_eigenpairs(&lap, 2, &EigenOptions::default()).unwrap();
        assert_eq!(pairs.values, vec![0.0, 0.0, 0.0]);
        let dense = dense_eig(&lap).unwrap();
        assert!(dense.values.iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn oracle_agreement_small_random_graph() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 50;
        let mut edges: Vec<(usize, usize, f64)> = (1..n)
            .map(|i| (rng.gen_range(0..i), i, rng.gen_range(0.5..2.0)))
            .collect();
        for _ in 0..60 {
            let i = rng.gen_range(0..n);
            let j = rng.gen_range(0..n);
            if i != j {
                edges.push((i, j, rng.gen_range(0.5..2.0)));
            }
        }
        let lap = build_laplacian(&BrainGraph::from_weighted_edges(n, edges).unwrap()).unwrap();
        let iterative = smallest_eigenpairs(&lap, 4, &EigenOptions::default()).unwrap();
        let dense = dense_eig(&lap).unwrap();
        for (a, b) in iterative.values.iter().zip(&dense.values) {
            assert!((a - b).abs() < 1e-6, "iterative {a} vs dense {b}");
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let lap = path_graph(40);
        let a = smallest_eigenpairs(&lap, 3, &EigenOptions::default()).unwrap();
        let b = smallest_eigenpairs(&lap, 3, &EigenOptions::default()).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.vectors, b.vectors);
    }

    #[test]
    fn too_many_pairs_requested() {
        let lap = path_graph(3);
        assert!(smallest_eigenpairs(&lap, 3, &EigenOptions::default()).is_err());
    }
}
