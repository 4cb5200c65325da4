//! Normalized graph Laplacian L = I - D^{-1/2} A D^{-1/2} in sparse
//! symmetric form.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::BrainGraph;

/// Compressed sparse row matrix, symmetric by construction.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_counts = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c as u32);
                values.push(v);
                row_counts[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n {
            row_counts[r + 1] += row_counts[r];
        }
        CsrMatrix {
            n,
            row_ptr: row_counts,
            col_idx,
            values,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// y = A x. Parallel over fixed row chunks; per-row summation order is
    /// fixed, so the result does not depend on the worker count.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        const CHUNK: usize = 4096;
        y.par_chunks_mut(CHUNK)
            .enumerate()
            .for_each(|(chunk_idx, rows)| {
                let base = chunk_idx * CHUNK;
                for (off, out) in rows.iter_mut().enumerate() {
                    let r = base + off;
                    let mut acc = 0.0;
                    for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                        acc += self.values[k] * x[self.col_idx[k] as usize];
                    }
                    *out = acc;
                }
            });
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k] as usize)] += self.values[k];
            }
        }
        m
    }
}

/// The normalized Laplacian of a surface graph plus its degree vector.
#[derive(Debug, Clone)]
pub struct LaplacianMatrix {
    pub matrix: CsrMatrix,
    pub degrees: Vec<f64>,
}

/// Builds L = I - D^{-1/2} A D^{-1/2}. Fails on zero-degree nodes.
pub fn build_laplacian(graph: &BrainGraph) -> Result<LaplacianMatrix> {
    let n = graph.n_nodes();
    let degrees = graph.degrees();
    if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::IsolatedNode(i));
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();

    let mut triplets = Vec::with_capacity(graph.edges().len() * 2 + n);
    let mut diag = vec![1.0f64; n];
    for e in graph.edges() {
        if e.i == e.j {
            diag[e.i] -= e.weight * inv_sqrt[e.i] * inv_sqrt[e.i];
        } else {
            let v = -e.weight * inv_sqrt[e.i] * inv_sqrt[e.j];
            triplets.push((e.i, e.j, v));
            triplets.push((e.j, e.i, v));
        }
    }
    for (i, d) in diag.into_iter().enumerate() {
        triplets.push((i, i, d));
    }
    Ok(LaplacianMatrix {
        matrix: CsrMatrix::from_triplets(n, triplets),
        degrees,
    })
}

impl LaplacianMatrix {
    pub fn n(&self) -> usize {
        self.matrix.n
    }

    /// The analytic null vector of a connected graph: D^{1/2} 1, normalized.
    pub fn null_vector(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.degrees.iter().map(|d| d.sqrt()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        for x in &mut v {
            *x /= norm;
        }
        v
    }

    /// True when every stored entry is exactly zero (identity adjacency).
    pub fn is_zero(&self) -> bool {
        self.matrix.values.iter().all(|&v| v == 0.0)
    }
}
