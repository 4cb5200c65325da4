//! Normalized spectral coordinates built from Laplacian eigenpairs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::eigen::{EigenPairs, TRIVIAL_EIGENVALUE};
use crate::error::{Error, Result};

/// Per-node spectral coordinates: column j holds sqrt(lambda_j) * u_j for
/// the j-th nontrivial eigenpair. The trivial pair is excluded; its sqrt(0)
/// scaling would zero it out anyway.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding {
    /// Nontrivial eigenvalues, ascending, length d.
    pub eigenvalues: Vec<f64>,
    /// N x d coordinate matrix.
    pub coords: Array2<f64>,
    /// Set once the embedding has been aligned to a reference (or is the
    /// reference itself).
    pub aligned: bool,
}

/// Scales the first d nontrivial eigenvectors into spectral coordinates.
pub fn spectral_coordinates(pairs: &EigenPairs, d: usize) -> Result<SpectralEmbedding> {
    if pairs.values.is_empty() {
        return Err(Error::InvalidArg("empty eigenpair set".into()));
    }
    if pairs.values[0].abs() >= TRIVIAL_EIGENVALUE {
        return Err(Error::InvalidArg(format!(
            "first eigenpair is not trivial (lambda = {})",
            pairs.values[0]
        )));
    }
    let available = pairs.values.len() - 1;
    if d > available {
        return Err(Error::InvalidArg(format!(
            "requested {d} coordinates but only {available} nontrivial pairs are available"
        )));
    }
    let n = pairs.vectors[0].len();
    let mut coords = Array2::zeros((n, d));
    let mut eigenvalues = Vec::with_capacity(d);
    for j in 0..d {
        let lambda = pairs.values[j + 1];
        eigenvalues.push(lambda);
        let scale = lambda.max(0.0).sqrt();
        for (i, &u) in pairs.vectors[j + 1].iter().enumerate() {
            coords[(i, j)] = scale * u;
        }
    }
    Ok(SpectralEmbedding {
        eigenvalues,
        coords,
        aligned: false,
    })
}

impl SpectralEmbedding {
    pub fn n(&self) -> usize {
        self.coords.nrows()
    }

    pub fn d(&self) -> usize {
        self.coords.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.coords.row(i).to_vec()
    }

    /// Writes the `N d` header followed by one coordinate row per node.
    pub fn save_coords(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "{} {}", self.n(), self.d());
        for row in self.coords.rows() {
            let parts: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(text, "{}", parts.join(" "));
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn save_eigenvalues(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for v in &self.eigenvalues {
            let _ = writeln!(text, "{v}");
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Reads a coordinate file written by [`save_coords`]. Eigenvalues are
    /// loaded separately when present.
    pub fn load_coords(path: &Path, eigenvalues_path: Option<&Path>, aligned: bool) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse(path, 1, "empty file"))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, 1, "bad `N d` header"))?;
        if dims.len() != 2 {
            return Err(Error::parse(path, 1, "expected `N d` header"));
        }
        let (n, d) = (dims[0], dims[1]);
        let mut coords = Array2::zeros((n, d));
        let mut row = 0usize;
        for (idx, line) in lines {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            if row >= n {
                return Err(Error::parse(path, idx + 1, "more rows than header declares"));
            }
            let vals: Vec<f64> = t
                .split_whitespace()
                .map(|v| v.parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::parse(path, idx + 1, "bad coordinate"))?;
            if vals.len() != d {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("expected {d} coordinates, got {}", vals.len()),
                ));
            }
            for (j, v) in vals.into_iter().enumerate() {
                coords[(row, j)] = v;
            }
            row += 1;
        }
        if row != n {
            return Err(Error::parse(
                path,
                row + 1,
                format!("expected {n} rows, got {row}"),
            ));
        }
        let eigenvalues = match eigenvalues_path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| {
                        l.trim()
                            .parse()
                            .map_err(|_| Error::parse(p, 0, "bad eigenvalue"))
                    })
                    .collect::<Result<Vec<f64>>>()?
            }
            None => vec![0.0; d],
        };
        Ok(SpectralEmbedding {
            eigenvalues,
            coords,
            aligned,
        })
    }
}
