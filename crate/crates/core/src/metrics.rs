//! Dice, Hausdorff and node-accuracy metrics.
//!
//! Hausdorff defaults to the symmetric max over parcel boundary vertices
//! (a parcel vertex with at least one differently-labeled neighbor) with
//! Euclidean distances in mm. A full-parcel variant and a 95th-percentile
//! variant are available for sensitivity checks.

use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::mesh::SurfaceMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HausdorffVariant {
    /// Max over boundary vertices (default).
    Boundary,
    /// Max over all parcel vertices.
    FullParcel,
    /// 95th percentile over boundary vertices.
    Percentile95,
}

/// Per-parcel and aggregate metrics of one prediction.
#[derive(Debug, Clone)]
pub struct ParcelMetrics {
    /// (parcel, dice, hausdorff_mm, reference support count).
    pub per_parcel: Vec<(usize, f64, f64, usize)>,
    pub dice_mean: f64,
    pub dice_std: f64,
    pub dice_min: f64,
    pub dice_max: f64,
    pub hausdorff_mean: f64,
    pub node_accuracy: f64,
}

/// Dice overlap of parcel c: 2|P&R| / (|P|+|R|). Unlabeled reference nodes
/// are excluded. Both sets empty -> 1, one empty -> 0.
pub fn dice_per_parcel(pred: &[i64], reference: &[i64], c: i64) -> f64 {
    let mut p = 0usize;
    let mut r = 0usize;
    let mut both = 0usize;
    for (&pl, &rl) in pred.iter().zip(reference) {
        if rl < 0 {
            continue;
        }
        let in_p = pl == c;
        let in_r = rl == c;
        p += in_p as usize;
        r += in_r as usize;
        both += (in_p && in_r) as usize;
    }
    if p + r == 0 {
        return 1.0;
    }
    2.0 * both as f64 / (p + r) as f64
}

/// Fraction of labeled reference nodes predicted correctly.
pub fn node_accuracy(pred: &[i64], reference: &[i64]) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for (&pl, &rl) in pred.iter().zip(reference) {
        if rl < 0 {
            continue;
        }
        total += 1;
        correct += (pl == rl) as usize;
    }
    if total == 0 {
        return Err(Error::NoLabeledNodes);
    }
    Ok(correct as f64 / total as f64)
}

fn parcel_vertices(labels: &[i64], c: i64) -> Vec<usize> {
    labels
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l == c).then_some(i))
        .collect()
}

/// Parcel vertices with at least one differently-labeled neighbor.
fn boundary_vertices(labels: &[i64], c: i64, neighbors: &[Vec<usize>]) -> Vec<usize> {
    parcel_vertices(labels, c)
        .into_iter()
        .filter(|&i| neighbors[i].iter().any(|&j| labels[j] != c))
        .collect()
}

fn flat_coords(mesh: &SurfaceMesh, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * 3);
    for &i in idx {
        out.extend_from_slice(&mesh.vertices[i]);
    }
    out
}

/// Directed max-of-min distances from `from` to `to` point sets.
fn directed_hausdorff(from: &[f64], to: &[f64]) -> f64 {
    let n = from.len() / 3;
    let tree = KdTree::build(to, 3);
    let mut worst = 0.0f64;
    for i in 0..n {
        let (_, d2) = tree.nearest(&from[i * 3..i * 3 + 3]);
        worst = worst.max(d2.sqrt());
    }
    worst
}

fn directed_distances(from: &[f64], to: &[f64]) -> Vec<f64> {
    let n = from.len() / 3;
    let tree = KdTree::build(to, 3);
    (0..n)
        .map(|i| tree.nearest(&from[i * 3..i * 3 + 3]).1.sqrt())
        .collect()
}

/// Brute-force directed Hausdorff; oracle for the indexed version.
pub fn directed_hausdorff_brute(from: &[f64], to: &[f64]) -> f64 {
    let n = from.len() / 3;
    let mut worst = 0.0f64;
    for i in 0..n {
        let (_, d2) = crate::kdtree::nearest_brute_force(to, 3, &from[i * 3..i * 3 + 3]);
        worst = worst.max(d2.sqrt());
    }
    worst
}

/// Largest pairwise vertex distance. Exact for small meshes, double-sweep
/// lower bound for large ones; used only as the empty-parcel penalty.
pub fn mesh_diameter(mesh: &SurfaceMesh) -> f64 {
    let n = mesh.n_vertices();
    let dist = |a: &[f64; 3], b: &[f64; 3]| {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    };
    if n <= 2048 {
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                worst = worst.max(dist(&mesh.vertices[i], &mesh.vertices[j]));
            }
        }
        return worst;
    }
    // Double sweep: farthest from vertex 0, then farthest from that.
    let farthest = |from: usize| {
        let mut best = (0usize, 0.0f64);
        for (i, v) in mesh.vertices.iter().enumerate() {
            let d = dist(&mesh.vertices[from], v);
            if d > best.1 {
                best = (i, d);
            }
        }
        best
    };
    let (p, _) = farthest(0);
    farthest(p).1
}

/// Symmetric Hausdorff distance for one parcel. An empty predicted parcel
/// (with a non-empty reference) scores the mesh diameter.
pub fn hausdorff_per_parcel(
    pred: &[i64],
    reference: &[i64],
    c: i64,
    mesh: &SurfaceMesh,
    neighbors: &[Vec<usize>],
    variant: HausdorffVariant,
) -> f64 {
    let (p_set, r_set) = match variant {
        HausdorffVariant::FullParcel => (parcel_vertices(pred, c), parcel_vertices(reference, c)),
        _ => (
            boundary_vertices(pred, c, neighbors),
            boundary_vertices(reference, c, neighbors),
        ),
    };
    match (p_set.is_empty(), r_set.is_empty()) {
        (true, true) => return 0.0,
        (true, false) | (false, true) => {
            // With boundary sets a parcel covering the whole mesh also has
            // an empty boundary; either way there is nothing to match.
            let p_all = parcel_vertices(pred, c);
            let r_all = parcel_vertices(reference, c);
            if p_all.is_empty() != r_all.is_empty() {
                return mesh_diameter(mesh);
            }
            if p_all.is_empty() && r_all.is_empty() {
                return 0.0;
            }
            // Both parcels exist but one boundary is empty: fall back to
            // the full parcels.
            let pf = flat_coords(mesh, &p_all);
            let rf = flat_coords(mesh, &r_all);
            return directed_hausdorff(&pf, &rf).max(directed_hausdorff(&rf, &pf));
        }
        (false, false) => {}
    }
    let pf = flat_coords(mesh, &p_set);
    let rf = flat_coords(mesh, &r_set);
    match variant {
        HausdorffVariant::Percentile95 => {
            let mut fwd = directed_distances(&pf, &rf);
            let mut bwd = directed_distances(&rf, &pf);
            percentile(&mut fwd, 0.95).max(percentile(&mut bwd, 0.95))
        }
        _ => directed_hausdorff(&pf, &rf).max(directed_hausdorff(&rf, &pf)),
    }
}

fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    if values.is_empty() {
        return 0.0;
    }
    let idx = ((values.len() as f64 - 1.0) * q).round() as usize;
    values[idx.min(values.len() - 1)]
}

/// Evaluates a prediction against reference labels over all `n_classes`
/// parcels, plus the pooled aggregates.
pub fn evaluate_parcellation(
    pred: &[i64],
    reference: &[i64],
    mesh: &SurfaceMesh,
    n_classes: usize,
    variant: HausdorffVariant,
) -> Result<ParcelMetrics> {
    if pred.len() != reference.len() || pred.len() != mesh.n_vertices() {
        return Err(Error::DimensionMismatch(format!(
            "pred {} / reference {} / mesh {}",
            pred.len(),
            reference.len(),
            mesh.n_vertices()
        )));
    }
    let neighbors = mesh.neighbor_lists();
    let mut per_parcel = Vec::with_capacity(n_classes);
    for c in 0..n_classes {
        let dice = dice_per_parcel(pred, reference, c as i64);
        let hd = hausdorff_per_parcel(pred, reference, c as i64, mesh, &neighbors, variant);
        let support = reference.iter().filter(|&&l| l == c as i64).count();
        per_parcel.push((c, dice, hd, support));
    }
    let dices: Vec<f64> = per_parcel.iter().map(|t| t.1).collect();
    let n = dices.len() as f64;
    let mean = dices.iter().sum::<f64>() / n;
    let var = dices.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let hmean = per_parcel.iter().map(|t| t.2).sum::<f64>() / n;
    Ok(ParcelMetrics {
        dice_mean: mean,
        dice_std: var.sqrt(),
        dice_min: dices.iter().cloned().fold(f64::INFINITY, f64::min),
        dice_max: dices.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        hausdorff_mean: hmean,
        node_accuracy: node_accuracy(pred, reference)?,
        per_parcel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_synthetic_surface;

    #[test]
    fn dice_basics() {
        let r = vec![0, 0, 1, 1, 2, 2];
        assert_eq!(dice_per_parcel(&r, &r, 0), 1.0);
        assert_eq!(dice_per_parcel(&r, &r, 2), 1.0);
        // Disjoint non-empty sets.
        let p = vec![1, 1, 0, 0, 2, 2];
        assert_eq!(dice_per_parcel(&p, &r, 0), 0.0);
        // |P|=|R|=2, overlap 1 -> 0.5.
        let p = vec![0, 1, 0, 1, 2, 2];
        assert_eq!(dice_per_parcel(&p, &r, 0), 0.5);
        // Both empty -> 1, one empty -> 0.
        assert_eq!(dice_per_parcel(&p, &r, 9), 1.0);
        let p = vec![9, 1, 0, 1, 2, 2];
        assert_eq!(dice_per_parcel(&p, &r, 9), 0.0);
    }

    #[test]
    fn dice_symmetry() {
        let a = vec![0, 1, 1, 2, 0, 2, 1];
        let b = vec![1, 1, 0, 2, 0, 1, 1];
        for c in 0..3 {
            assert_eq!(dice_per_parcel(&a, &b, c), dice_per_parcel(&b, &a, c));
        }
    }

    #[test]
    fn accuracy_basics() {
        let r = vec![0, 1, 2, 3];
        assert_eq!(node_accuracy(&r, &r).unwrap(), 1.0);
        assert_eq!(node_accuracy(&[1, 2, 3, 0], &r).unwrap(), 0.0);
        assert_eq!(node_accuracy(&[0, 1, 0, 0], &r).unwrap(), 0.5);
        // Unlabeled reference nodes are excluded.
        let r = vec![0, -1, 2, -1];
        assert_eq!(node_accuracy(&[0, 5, 1, 5], &r).unwrap(), 0.5);
        assert!(node_accuracy(&[0, 0], &[-1, -1]).is_err());
    }

    #[test]
    fn hausdorff_identical_labelings_is_zero() {
        let mesh = generate_synthetic_surface(5, 162, 4, 0.2).unwrap();
        let labels = mesh.labels.clone().unwrap();
        let neighbors = mesh.neighbor_lists();
        for c in 0..4 {
            let hd = hausdorff_per_parcel(
                &labels,
                &labels,
                c,
                &mesh,
                &neighbors,
                HausdorffVariant::Boundary,
            );
            assert_eq!(hd, 0.0);
        }
    }

    #[test]
    fn hausdorff_one_ring_shift_approximates_edge_length() {
        // Shift a parcel boundary by one ring: Hausdorff ~ mean edge length.
        let mesh = generate_synthetic_surface(6, 642, 2, 0.0).unwrap();
        let reference = mesh.labels.clone().unwrap();
        let neighbors = mesh.neighbor_lists();
        // Grow parcel 0 by one ring.
        let mut pred = reference.clone();
        for i in 0..mesh.n_vertices() {
            if reference[i] == 1 && neighbors[i].iter().any(|&j| reference[j] == 0) {
                pred[i] = 0;
            }
        }
        let hd = hausdorff_per_parcel(
            &pred,
            &reference,
            0,
            &mesh,
            &neighbors,
            HausdorffVariant::Boundary,
        );
        let mean_edge = {
            let mut total = 0.0;
            let mut count = 0usize;
            for (i, j) in mesh.edges() {
                let a = mesh.vertices[i];
                let b = mesh.vertices[j];
                total += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2))
                    .sqrt();
                count += 1;
            }
            total / count as f64
        };
        assert!(hd > 0.0);
        assert!(
            hd < 3.0 * mean_edge,
            "one-ring shift gave {hd} vs mean edge {mean_edge}"
        );
    }

    #[test]
    fn hausdorff_brute_force_agreement() {
        let mesh = generate_synthetic_surface(7, 162, 4, 0.3).unwrap();
        let reference = mesh.labels.clone().unwrap();
        let mut pred = reference.clone();
        // Perturb some labels.
        for i in (0..pred.len()).step_by(7) {
            pred[i] = (pred[i] + 1) % 4;
        }
        let neighbors = mesh.neighbor_lists();
        for c in 0..4 {
            let pb = boundary_vertices(&pred, c, &neighbors);
            let rb = boundary_vertices(&reference, c, &neighbors);
            if pb.is_empty() || rb.is_empty() {
                continue;
            }
            let pf = flat_coords(&mesh, &pb);
            let rf = flat_coords(&mesh, &rb);
            let fast = directed_hausdorff(&pf, &rf).max(directed_hausdorff(&rf, &pf));
            let slow = directed_hausdorff_brute(&pf, &rf).max(directed_hausdorff_brute(&rf, &pf));
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn empty_predicted_parcel_scores_diameter() {
        let mesh = generate_synthetic_surface(8, 162, 4, 0.1).unwrap();
        let reference = mesh.labels.clone().unwrap();
        let pred: Vec<i64> = reference.iter().map(|&l| if l == 2 { 0 } else { l }).collect();
        let neighbors = mesh.neighbor_lists();
        let hd = hausdorff_per_parcel(
            &pred,
            &reference,
            2,
            &mesh,
            &neighbors,
            HausdorffVariant::Boundary,
        );
        assert_eq!(hd, mesh_diameter(&mesh));
    }

    #[test]
    fn aggregate_std_matches_two_pass() {
        let mesh = generate_synthetic_surface(9, 162, 4, 0.2).unwrap();
        let reference = mesh.labels.clone().unwrap();
        let mut pred = reference.clone();
        for i in (0..pred.len()).step_by(5) {
            pred[i] = (pred[i] + 1) % 4;
        }
        let m = evaluate_parcellation(&pred, &reference, &mesh, 4, HausdorffVariant::Boundary)
            .unwrap();
        let dices: Vec<f64> = m.per_parcel.iter().map(|t| t.1).collect();
        let mean = dices.iter().sum::<f64>() / dices.len() as f64;
        let var = dices.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / dices.len() as f64;
        assert!((m.dice_mean - mean).abs() < 1e-10);
        assert!((m.dice_std - var.sqrt()).abs() < 1e-10);
        assert!(m.dice_min <= m.dice_mean && m.dice_mean <= m.dice_max);
    }

    #[test]
    fn percentile_variant_below_max() {
        let mesh = generate_synthetic_surface(10, 642, 4, 0.2).unwrap();
        let reference = mesh.labels.clone().unwrap();
        let mut pred = reference.clone();
        for i in (0..pred.len()).step_by(3) {
            pred[i] = (pred[i] + 1) % 4;
        }
        let neighbors = mesh.neighbor_lists();
        for c in 0..4 {
            let full = hausdorff_per_parcel(
                &pred,
                &reference,
                c,
                &mesh,
                &neighbors,
                HausdorffVariant::Boundary,
            );
            let p95 = hausdorff_per_parcel(
                &pred,
                &reference,
                c,
                &mesh,
                &neighbors,
                HausdorffVariant::Percentile95,
            );
            assert!(p95 <= full + 1e-12);
        }
    }
}
