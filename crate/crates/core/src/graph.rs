//! Weighted surface graph built from a mesh.
//!
//! In `MeshEdges` mode every mesh edge becomes a graph edge weighted by the
//! inverse Euclidean distance between its endpoints. `Identity` mode keeps
//! only unit self-loops, which removes all neighborhood information.

use crate::error::{Error, Result};
use crate::mesh::SurfaceMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdjacencyMode {
    MeshEdges,
    Identity,
}

/// One undirected edge with a strictly positive weight, stored once with
/// `i <= j` (self-loops have `i == j`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Node features plus the weighted edge list of the surface graph.
#[derive(Debug, Clone)]
pub struct BrainGraph {
    n: usize,
    edges: Vec<GraphEdge>,
    mode: AdjacencyMode,
    /// Raw vertex coordinates (mm), one row per node.
    pub coords: Vec<[f64; 3]>,
    /// Per-node sulcal depth, z-scored upstream.
    pub sulcal_depth: Vec<f64>,
}

impl BrainGraph {
    /// Builds the graph of a mesh under the given adjacency mode.
    pub fn from_mesh(mesh: &SurfaceMesh, mode: AdjacencyMode) -> Result<Self> {
        let n = mesh.n_vertices();
        let edges = match mode {
            AdjacencyMode::Identity => (0..n)
                .map(|i| GraphEdge {
                    i,
                    j: i,
                    weight: 1.0,
                })
                .collect(),
            AdjacencyMode::MeshEdges => {
                let mut edges = Vec::new();
                for (i, j) in mesh.edges() {
                    let a = mesh.vertices[i];
                    let b = mesh.vertices[j];
                    let dist = ((a[0] - b[0]).powi(2)
                        + (a[1] - b[1]).powi(2)
                        + (a[2] - b[2]).powi(2))
                    .sqrt();
                    if dist <= 0.0 {
                        return Err(Error::ZeroLengthEdge { i, j });
                    }
                    edges.push(GraphEdge {
                        i,
                        j,
                        weight: 1.0 / dist,
                    });
                }
                edges
            }
        };
        Ok(BrainGraph {
            n,
            edges,
            mode,
            coords: mesh.vertices.clone(),
            sulcal_depth: mesh.sulcal_depth.clone(),
        })
    }

    /// Builds a graph directly from a weighted edge list. Used for graphs
    /// that do not come from a mesh (e.g. randomized solver checks).
    pub fn from_weighted_edges(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut out = Vec::with_capacity(edges.len());
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidArg(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if !(w > 0.0) {
                return Err(Error::InvalidArg(format!(
                    "edge ({i}, {j}) has non-positive weight {w}"
                )));
            }
            out.push(GraphEdge {
                i: i.min(j),
                j: i.max(j),
                weight: w,
            });
        }
        out.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
        out.dedup_by(|a, b| (a.i, a.j) == (b.i, b.j));
        Ok(BrainGraph {
            n,
            edges: out,
            mode: AdjacencyMode::MeshEdges,
            coords: vec![[0.0; 3]; n],
            sulcal_depth: vec![0.0; n],
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn mode(&self) -> AdjacencyMode {
        self.mode
    }

    /// Undirected edges, each stored once with `i <= j`.
    pub fn edges(&self) -> &[GraphEdge] {
        &self.edges
    }

    /// Weighted degree of every node: d_i = sum_j w(i, j).
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for e in &self.edges {
            if e.i == e.j {
                d[e.i] += e.weight;
            } else {
                d[e.i] += e.weight;
                d[e.j] += e.weight;
            }
        }
        d
    }

    /// Neighbor lists including a self entry for every node, sorted by
    /// neighbor index. This is the neighborhood the convolution sums over.
    pub fn neighbor_lists_with_self(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for e in &self.edges {
            if e.i != e.j {
                adj[e.i].push(e.j);
                adj[e.j].push(e.i);
            }
        }
        for (i, list) in adj.iter_mut().enumerate() {
            list.push(i);
            list.sort_unstable();
            list.dedup();
        }
        adj
    }
}
