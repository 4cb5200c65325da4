//! Exact nearest-neighbor search over low-dimensional point sets.
//!
//! The tree answers exactly the same query as an exhaustive scan, including
//! the tie rule (lowest point index wins on equal distance): equal-distance
//! subtrees are never pruned.

/// Static kd-tree over `dim`-dimensional points stored row-major.
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    /// Point indices arranged so each tree node owns a contiguous range.
    order: Vec<usize>,
    nodes: Vec<Node>,
}

struct Node {
    /// Splitting dimension; usize::MAX marks a leaf.
    axis: usize,
    split: f64,
    start: usize,
    end: usize,
    left: usize,
    right: usize,
}

const LEAF_SIZE: usize = 16;

impl KdTree {
    pub fn build(points: &[f64], dim: usize) -> KdTree {
        assert!(dim > 0 && points.len() % dim == 0);
        let n = points.len() / dim;
        let mut tree = KdTree {
            dim,
            points: points.to_vec(),
            order: (0..n).collect(),
            nodes: Vec::new(),
        };
        if n > 0 {
            tree.split_range(0, n);
        }
        tree
    }

    fn coord(&self, point: usize, axis: usize) -> f64 {
        self.points[point * self.dim + axis]
    }

    fn split_range(&mut self, start: usize, end: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node {
            axis: usize::MAX,
            split: 0.0,
            start,
            end,
            left: usize::MAX,
            right: usize::MAX,
        });
        if end - start <= LEAF_SIZE {
            return id;
        }
        // Split on the widest axis at the median point.
        let mut best_axis = 0;
        let mut best_spread = -1.0f64;
        for axis in 0..self.dim {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &p in &self.order[start..end] {
                let c = self.coord(p, axis);
                lo = lo.min(c);
                hi = hi.max(c);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                best_axis = axis;
            }
        }
        if best_spread <= 0.0 {
            return id; // all points identical on every axis
        }
        let mid = (start + end) / 2;
        {
            let dim = self.dim;
            let points = std::mem::take(&mut self.points);
            self.order[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
                points[a * dim + best_axis]
                    .total_cmp(&points[b * dim + best_axis])
                    .then_with(|| a.cmp(&b))
            });
            self.points = points;
        }
        let split = self.coord(self.order[mid], best_axis);
        let left = self.split_range(start, mid);
        let right = self.split_range(mid, end);
        let node = &mut self.nodes[id];
        node.axis = best_axis;
        node.split = split;
        node.left = left;
        node.right = right;
        id
    }

    /// Index and squared distance of the exact nearest point; lowest index
    /// on ties.
    pub fn nearest(&self, query: &[f64]) -> (usize, f64) {
        debug_assert_eq!(query.len(), self.dim);
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(0, query, &mut best);
        best
    }

    fn search(&self, node_id: usize, query: &[f64], best: &mut (usize, f64)) {
        let node = &self.nodes[node_id];
        if node.axis == usize::MAX {
            for &p in &self.order[node.start..node.end] {
                let mut d2 = 0.0;
                for a in 0..self.dim {
                    let d = query[a] - self.coord(p, a);
                    d2 += d * d;
                }
                if d2 < best.1 || (d2 == best.1 && p < best.0) {
                    *best = (p, d2);
                }
            }
            return;
        }
        let delta = query[node.axis] - node.split;
        let (near, far) = if delta < 0.0 {
            (node.left, node.right)
        } else {
            (node.right, node.left)
        };
        self.search(near, query, best);
        // Equal plane distance may still hide a lower index: do not prune it.
        if delta * delta <= best.1 {
            self.search(far, query, best);
        }
    }
}

/// Exhaustive scan with the same contract as [`KdTree::nearest`].
pub fn nearest_brute_force(points: &[f64], dim: usize, query: &[f64]) -> (usize, f64) {
    let n = points.len() / dim;
    let mut best = (usize::MAX, f64::INFINITY);
    for p in 0..n {
        let mut d2 = 0.0;
        for a in 0..dim {
            let d = query[a] - points[p * dim + a];
            d2 += d * d;
        }
        if d2 < best.1 {
            best = (p, d2);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn agrees_with_brute_force_including_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // Quantized coordinates force frequent exact ties.
        let n = 400;
        let dim = 3;
        let mut points = Vec::with_capacity(n * dim);
        for _ in 0..n * dim {
            points.push((rng.gen_range(0..4) as f64) * 0.5);
        }
        let tree = KdTree::build(&points, dim);
        for _ in 0..300 {
            let q: Vec<f64> = (0..dim)
                .map(|_| (rng.gen_range(0..4) as f64) * 0.5)
                .collect();
            let fast = tree.nearest(&q);
            let slow = nearest_brute_force(&points, dim, &q);
            assert_eq!(fast, slow);
        }
    }

    #[test]
    fn single_point() {
        let tree = KdTree::build(&[1.0, 2.0, 3.0], 3);
        assert_eq!(tree.nearest(&[0.0, 0.0, 0.0]).0, 0);
    }
}
