//! ICP alignment of spectral embeddings to a reference.
//!
//! A spectral embedding is only defined up to an orthogonal transform
//! (eigenvector signs can flip; near-degenerate eigenvectors mix), so each
//! subject is mapped to the reference domain by alternating nearest-neighbor
//! correspondence with an orthogonal Procrustes solve. ICP only finds the
//! local basin, so the search starts from a small deterministic candidate
//! set: the identity, all sign-flip diagonals, and principal-axis matches
//! between the two point clouds.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::SpectralEmbedding;
use crate::error::{Error, Result};
use crate::kdtree::KdTree;

/// Reference sets smaller than this are scanned exhaustively; larger ones
/// go through the spatial index. Both sides obey the same tie rule, so the
/// answers are identical.
const SPATIAL_INDEX_THRESHOLD: usize = 5000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentResult {
    pub d: usize,
    /// Row-major orthogonal d x d transform applied as `coords * R`.
    pub r: Vec<f64>,
    pub iterations: usize,
    pub final_distance: f64,
    pub converged: bool,
}

impl AlignmentResult {
    pub fn transform_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d, self.d, &self.r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("serializable");
        bytes.push(b'\n');
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, 0, e.to_string()))
    }
}

/// For each point, the index of its nearest reference point (Euclidean,
/// ties to the lowest index).
pub fn nearest_reference(points: &Array2<f64>, reference: &Array2<f64>) -> Result<Vec<usize>> {
    let (corr, _) = nearest_reference_with_distance(points, reference)?;
    Ok(corr)
}

fn nearest_reference_with_distance(
    points: &Array2<f64>,
    reference: &Array2<f64>,
) -> Result<(Vec<usize>, f64)> {
    let d = points.ncols();
    if reference.ncols() != d {
        return Err(Error::DimensionMismatch(format!(
            "points have {d} columns, reference has {}",
            reference.ncols()
        )));
    }
    if points.nrows() == 0 || reference.nrows() == 0 {
        return Err(Error::InvalidArg("empty point set".into()));
    }

    let m = reference.nrows();
    let ref_flat = reference.as_standard_layout();
    let ref_slice = ref_flat.as_slice().expect("standard layout");
    let assign: Vec<(usize, f64)> = if m > SPATIAL_INDEX_THRESHOLD {
        let tree = KdTree::build(ref_slice, d);
        points
            .rows()
            .into_iter()
            .collect::<Vec<_>>()
            .par_iter()
            .map(|row| tree.nearest(row.as_slice().expect("contiguous row")))
            .collect()
    } else {
        points
            .rows()
            .into_iter()
            .map(|row| {
                crate::kdtree::nearest_brute_force(
                    ref_slice,
                    d,
                    row.as_slice().expect("contiguous row"),
                )
            })
            .collect()
    };
    let mean = assign.iter().map(|(_, d2)| d2.sqrt()).sum::<f64>() / assign.len() as f64;
    Ok((assign.into_iter().map(|(i, _)| i).collect(), mean))
}

/// Orthogonal matrix R minimizing ||source * R - target||_F over matched
/// rows. No centering: spectral coordinates are already origin-anchored.
/// Reflections are allowed; eigenvector sign flips are exactly reflections.
pub fn procrustes_transform(source: &Array2<f64>, target: &Array2<f64>) -> Result<DMatrix<f64>> {
    let d = source.ncols();
    if target.ncols() != d || target.nrows() != source.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "source is {}x{}, target is {}x{}",
            source.nrows(),
            d,
            target.nrows(),
            target.ncols()
        )));
    }
    if source.nrows() < d {
        return Err(Error::InvalidArg(format!(
            "need at least {d} matched rows, got {}",
            source.nrows()
        )));
    }
    // Cross-covariance M = source^T * target (d x d).
    let mut m: DMatrix<f64> = DMatrix::zeros(d, d);
    for r in 0..source.nrows() {
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] += source[(r, i)] * target[(r, j)];
            }
        }
    }
    let svd = m.clone().svd(true, true);
    let max_sv = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if svd.singular_values.iter().any(|&s| s <= 1e-12 * max_sv.max(1e-300)) {
        return Err(Error::DegenerateProcrustes);
    }
    let u = svd.u.expect("svd with u");
    let v_t = svd.v_t.expect("svd with v_t");
    Ok(u * v_t)
}

fn apply_transform(coords: &Array2<f64>, r: &DMatrix<f64>) -> Array2<f64> {
    let (n, d) = (coords.nrows(), coords.ncols());
    let mut out = Array2::zeros((n, d));
    for row in 0..n {
        for j in 0..d {
            let mut acc = 0.0;
            for i in 0..d {
                acc += coords[(row, i)] * r[(i, j)];
            }
            out[(row, j)] = acc;
        }
    }
    out
}

/// Principal-axis candidate transforms: covariance eigenvectors of both
/// clouds matched in descending-eigenvalue order, under every sign choice.
fn pca_candidates(points: &Array2<f64>, reference: &Array2<f64>) -> Vec<DMatrix<f64>> {
    let d = points.ncols();
    let axes = |m: &Array2<f64>| -> DMatrix<f64> {
        let mut cov: DMatrix<f64> = DMatrix::zeros(d, d);
        for r in 0..m.nrows() {
            for i in 0..d {
                for j in 0..d {
                    cov[(i, j)] += m[(r, i)] * m[(r, j)];
                }
            }
        }
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut v = DMatrix::zeros(d, d);
        for (slot, &src) in order.iter().enumerate() {
            let mut col: Vec<f64> = (0..d).map(|i| eig.eigenvectors[(i, src)]).collect();
            crate::eigen::canonical_sign(&mut col);
            for i in 0..d {
                v[(i, slot)] = col[i];
            }
        }
        v
    };
    let v_src = axes(points);
    let v_ref = axes(reference);

    let mut out = Vec::with_capacity(1 << d);
    for signs in 0..(1u32 << d) {
        let mut s = DMatrix::identity(d, d);
        for j in 0..d {
            if signs >> j & 1 == 1 {
                s[(j, j)] = -1.0;
            }
        }
        out.push(&v_src * s * v_ref.transpose());
    }
    out
}

fn sign_flip_candidates(d: usize) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(1 << d);
    for signs in 0..(1u32 << d) {
        let mut s = DMatrix::identity(d, d);
        for j in 0..d {
            if signs >> j & 1 == 1 {
                s[(j, j)] = -1.0;
            }
        }
        out.push(s);
    }
    out
}

struct IcpRun {
    r: DMatrix<f64>,
    coords: Array2<f64>,
    distance: f64,
    iterations: usize,
    converged: bool,
}

/// Runs ICP from one starting transform. Only improving steps are accepted,
/// so the recorded mean nearest-neighbor distance sequence is non-increasing.
/// One iteration = one correspondence pass.
fn icp_from(
    embedding: &Array2<f64>,
    reference: &Array2<f64>,
    r0: DMatrix<f64>,
    max_iters: usize,
    tol: f64,
) -> Result<IcpRun> {
    let gather = |corr: &[usize]| {
        let d = reference.ncols();
        let mut t = Array2::zeros((corr.len(), d));
        for (row, &c) in corr.iter().enumerate() {
            for j in 0..d {
                t[(row, j)] = reference[(c, j)];
            }
        }
        t
    };

    let mut r = r0;
    let mut coords = apply_transform(embedding, &r);
    let (mut corr, mut distance) = nearest_reference_with_distance(&coords, reference)?;
    let mut iterations = 1;
    let mut converged = distance <= tol;

    while !converged && iterations < max_iters {
        let step = procrustes_transform(&coords, &gather(&corr))?;
        let r_new = &r * &step;
        let coords_new = apply_transform(embedding, &r_new);
        let (corr_new, distance_new) = nearest_reference_with_distance(&coords_new, reference)?;
        iterations += 1;
        if distance - distance_new < tol {
            converged = true;
            if distance_new <= distance {
                r = r_new;
                coords = coords_new;
                distance = distance_new;
            }
            break;
        }
        r = r_new;
        coords = coords_new;
        corr = corr_new;
        distance = distance_new;
    }
    Ok(IcpRun {
        r,
        coords,
        distance,
        iterations,
        converged,
    })
}

/// Aligns an embedding to a reference embedding.
///
/// Candidate starting transforms are screened with two ICP iterations; the
/// two best are run to convergence and the lower final distance wins. Fully
/// deterministic: candidate order breaks ties.
pub fn icp_align(
    embedding: &SpectralEmbedding,
    reference: &SpectralEmbedding,
    max_iters: usize,
    tol: f64,
) -> Result<(AlignmentResult, SpectralEmbedding)> {
    let d = embedding.d();
    if reference.d() != d {
        return Err(Error::DimensionMismatch(format!(
            "embedding has d={d}, reference has d={}",
            reference.d()
        )));
    }

    let mut candidates = sign_flip_candidates(d);
    candidates.extend(pca_candidates(&embedding.coords, &reference.coords));

    let mut screened: Vec<(usize, f64)> = Vec::new();
    let mut first_error = None;
    for (idx, r0) in candidates.iter().enumerate() {
        match icp_from(
            &embedding.coords,
            &reference.coords,
            r0.clone(),
            3.min(max_iters),
            tol,
        ) {
            Ok(run) => screened.push((idx, run.distance)),
            // A bad start may yield a degenerate correspondence; other
            // starts can still succeed.
            Err(e) => first_error = first_error.or(Some(e)),
        }
    }
    screened.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));

    let mut best: Option<IcpRun> = None;
    for (idx, _) in screened.iter().take(4) {
        let run = match icp_from(
            &embedding.coords,
            &reference.coords,
            candidates[*idx].clone(),
            max_iters,
            tol,
        ) {
            Ok(run) => run,
            Err(e) => {
                first_error = first_error.or(Some(e));
                continue;
            }
        };
        let better = match &best {
            None => true,
            Some(b) => run.distance < b.distance,
        };
        if better {
            best = Some(run);
        }
    }
    let run = match best {
        Some(run) => run,
        None => return Err(first_error.expect("no run and no error")),
    };

    let result = AlignmentResult {
        d,
        r: run.r.transpose().iter().cloned().collect(), // row-major
        iterations: run.iterations,
        final_distance: run.distance,
        converged: run.converged,
    };
    let aligned = SpectralEmbedding {
        eigenvalues: embedding.eigenvalues.clone(),
        coords: run.coords,
        aligned: true,
    };
    Ok((result, aligned))
}

/// Default ICP iteration cap.
pub const ICP_MAX_ITERS: usize = 100;
/// Default ICP convergence threshold on the mean NN distance improvement.
pub const ICP_TOL: f64 = 1e-7;

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, d), |_| rng.gen_range(-1.0..1.0))
    }

    fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let qr = m.qr();
        qr.q()
    }

    #[test]
    fn identity_correspondence() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let corr = nearest_reference(&pts, &pts).unwrap();
        assert_eq!(corr, vec![0, 1, 2]);
    }

    #[test]
    fn single_reference_point() {
        let pts = array![[0.0, 0.0], [1.0, 0.0], [5.0, 3.0]];
        let reference = array![[2.0, 2.0]];
        let corr = nearest_reference(&pts, &reference).unwrap();
        assert_eq!(corr, vec![0, 0, 0]);
    }

    #[test]
    fn correspondence_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = random_cloud(100, 3, &mut rng);
        let reference = random_cloud(100, 3, &mut rng);
        let corr = nearest_reference(&pts, &reference).unwrap();
        for (i, &c) in corr.iter().enumerate() {
            let q: Vec<f64> = pts.row(i).to_vec();
            let flat = reference.as_standard_layout();
            let (slow, _) =
                crate::kdtree::nearest_brute_force(flat.as_slice().unwrap(), 3, &q);
            assert_eq!(c, slow);
        }
    }

    #[test]
    fn procrustes_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = random_cloud(40, 3, &mut rng);
        let r = procrustes_transform(&pts, &pts).unwrap();
        let eye = DMatrix::<f64>::identity(3, 3);
        assert!((r - eye).norm() < 1e-10);
    }

    #[test]
    fn procrustes_recovers_random_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let pts = random_cloud(60, 3, &mut rng);
            let q = random_orthogonal(3, &mut rng);
            let target = apply_transform(&pts, &q);
            let r = procrustes_transform(&pts, &target).unwrap();
            assert!((&r - &q).norm() < 1e-8, "residual {}", (&r - &q).norm());
            let rt_r = r.transpose() * &r;
            assert!((rt_r - DMatrix::<f64>::identity(3, 3)).norm() < 1e-10);
        }
    }

    #[test]
    fn procrustes_recovers_reflection() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pts = random_cloud(50, 3, &mut rng);
        let mut q = DMatrix::<f64>::identity(3, 3);
        q[(1, 1)] = -1.0;
        let target = apply_transform(&pts, &q);
        let r = procrustes_transform(&pts, &target).unwrap();
        assert!((&r - &q).norm() < 1e-10);
        assert!((r.determinant() + 1.0).abs() < 1e-8);
    }

    #[test]
    fn procrustes_degenerate_rank() {
        // All points on a line: rank-1 cross-covariance.
        let mut pts = Array2::zeros((10, 3));
        for i in 0..10 {
            pts[(i, 0)] = i as f64;
        }
        assert!(matches!(
            procrustes_transform(&pts, &pts),
            Err(Error::DegenerateProcrustes)
        ));
    }

    fn test_embedding(n: usize, seed: u64) -> SpectralEmbedding {
        // Anisotropic cloud standing in for a spectral embedding.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords = random_cloud(n, 3, &mut rng);
        for mut row in coords.rows_mut() {
            row[1] *= 0.6;
            row[2] *= 0.3;
        }
        SpectralEmbedding {
            eigenvalues: vec![1.0, 0.6, 0.3],
            coords,
            aligned: false,
        }
    }

    #[test]
    fn self_alignment_is_identity_in_one_iteration() {
        let emb = test_embedding(200, 7);
        let (res, aligned) = icp_align(&emb, &emb, ICP_MAX_ITERS, ICP_TOL).unwrap();
        let r = res.transform_matrix();
        assert!((r - DMatrix::<f64>::identity(3, 3)).norm() <= 1e-8);
        assert_eq!(res.iterations, 1);
        assert!(res.converged);
        assert!(res.final_distance <= 1e-12);
        assert!(aligned.aligned);
    }

    #[test]
    fn recovers_orthogonal_transform_and_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let reference = test_embedding(300, 9);
        for trial in 0..5 {
            let q = random_orthogonal(3, &mut rng);
            // Permute rows and transform.
            let mut perm: Vec<usize> = (0..300).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let mut coords = Array2::zeros((300, 3));
            for (row, &p) in perm.iter().enumerate() {
                for j in 0..3 {
                    coords[(row, j)] = reference.coords[(p, j)];
                }
            }
            let moved = SpectralEmbedding {
                eigenvalues: reference.eigenvalues.clone(),
                coords: apply_transform(&coords, &q),
                aligned: false,
            };
            let (res, _) = icp_align(&moved, &reference, ICP_MAX_ITERS, ICP_TOL).unwrap();
            assert!(
                res.final_distance <= 1e-6,
                "trial {trial}: distance {}",
                res.final_distance
            );
            // The transform is stored for `coords * R`, so recovery of an
            // exact copy means Q * R = I, i.e. R * Q = I as well.
            let rq = res.transform_matrix() * &q;
            let err = (rq - DMatrix::<f64>::identity(3, 3)).norm();
            assert!(err < 1e-6, "trial {trial}: recovery error {err}");
        }
    }

    #[test]
    fn alignment_reduces_distance_between_different_clouds() {
        let a = test_embedding(250, 20);
        let b = test_embedding(250, 21);
        let before = nearest_reference_with_distance(&a.coords, &b.coords)
            .unwrap()
            .1;
        let (res, _) = icp_align(&a, &b, ICP_MAX_ITERS, ICP_TOL).unwrap();
        assert!(
            res.final_distance < before,
            "final {} vs initial {before}",
            res.final_distance
        );
    }

    #[test]
    fn result_roundtrip() {
        let emb = test_embedding(50, 30);
        let (res, _) = icp_align(&emb, &emb, ICP_MAX_ITERS, ICP_TOL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("align.json");
        res.save(&path).unwrap();
        let loaded = AlignmentResult::load(&path).unwrap();
        assert_eq!(loaded.r, res.r);
        assert_eq!(loaded.iterations, res.iterations);
    }
}
