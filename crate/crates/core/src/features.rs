//! Per-node input features for the network.
//!
//! Both modes produce an N x (d+1) matrix whose last column is sulcal depth.
//! Spectral mode uses the aligned spectral coordinates, Euclidean mode the
//! raw vertex positions; in either case the coordinate columns are z-scored
//! per subject so the network sees O(1) inputs. The same z-scored columns
//! double as the kernel coordinates of the convolution.

use ndarray::Array2;

use crate::embedding::SpectralEmbedding;
use crate::error::{Error, Result};
use crate::graph::BrainGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMode {
    Euclidean,
    Spectral,
}

fn z_score_columns(m: &mut Array2<f64>) {
    let n = m.nrows() as f64;
    for mut col in m.columns_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 0.0 {
            col.fill(0.0);
        } else {
            col.mapv_inplace(|v| (v - mean) / std);
        }
    }
}

/// Builds the feature matrix. Spectral mode requires an aligned embedding.
pub fn build_feature_matrix(
    graph: &BrainGraph,
    embedding: Option<&SpectralEmbedding>,
    mode: FeatureMode,
) -> Result<Array2<f64>> {
    let n = graph.n_nodes();
    let mut coords = match mode {
        FeatureMode::Spectral => {
            let emb = embedding.ok_or(Error::DimensionMismatch(
                "spectral mode needs an embedding".into(),
            ))?;
            if !emb.aligned {
                return Err(Error::UnalignedEmbedding);
            }
            if emb.n() != n {
                return Err(Error::DimensionMismatch(format!(
                    "embedding has {} rows, graph has {n} nodes",
                    emb.n()
                )));
            }
            emb.coords.clone()
        }
        FeatureMode::Euclidean => {
            Array2::from_shape_fn((n, 3), |(i, j)| graph.coords[i][j])
        }
    };
    z_score_columns(&mut coords);

    let d = coords.ncols();
    let mut features = Array2::zeros((n, d + 1));
    for i in 0..n {
        for j in 0..d {
            features[(i, j)] = coords[(i, j)];
        }
        features[(i, d)] = graph.sulcal_depth[i];
    }
    Ok(features)
}
