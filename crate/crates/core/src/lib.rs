//! Learning per-vertex labels on triangulated surfaces by running
//! Gaussian-kernel graph convolutions in an aligned spectral domain.
//!
//! The pipeline: build a weighted graph from a surface mesh, embed it with
//! the smallest eigenvectors of the normalized graph Laplacian, align the
//! embedding to a reference with ICP + orthogonal Procrustes, train a
//! three-layer geometric convolutional network on the aligned coordinates,
//! and optionally clean up the prediction with a graph-cut MRF.

pub mod align;
pub mod eigen;
pub mod embedding;
pub mod error;
pub mod features;
pub mod graph;
pub mod kdtree;
pub mod laplacian;
pub mod mesh;
pub mod metrics;
pub mod mrf;
pub mod net;
pub mod pipeline;
pub mod report;
pub mod split;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
