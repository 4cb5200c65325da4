//! Geometric convolutional network with Gaussian kernels.
//!
//! Each layer computes, for node i and output map p,
//!
//! ```text
//! z_ip = sum_{j in N(i)} sum_q sum_k w_pqk * y_jq * phi_k(u_i, u_j) + b_p
//! phi_k(u_i, u_j) = exp(-sigma_k * ||(u_j - u_i) - mu_k||^2)
//! ```
//!
//! where N(i) is the mesh 1-ring plus the node itself and u are the kernel
//! coordinates (aligned spectral or z-scored Euclidean). Three layers, leaky
//! ReLU after each, softmax on the last activation, cross-entropy loss over
//! labeled nodes. The backward pass is fully analytic, including the kernel
//! means and (log-parameterized) precisions.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::BrainGraph;

pub const CROSS_ENTROPY_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input feature maps (kernel coordinates + sulcal depth).
    pub input_dim: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Output maps of the last layer = number of parcels.
    pub n_classes: usize,
    /// Gaussian kernels per layer.
    pub kernels: usize,
    /// Dimension of the kernel coordinates.
    pub embed_dim: usize,
    pub leaky_slope: f64,
    /// Typical neighborhood size |N(i)|, part of the effective fan-in at
    /// initialization (7 for a closed triangulation's 1-ring plus self,
    /// 1 for identity adjacency).
    pub neighborhood_size: usize,
    /// Typical kernel-coordinate offset norm between neighbors. Kernel
    /// means spread over this scale and precisions start at its inverse
    /// square, so the Gaussians discriminate within a 1-ring from the
    /// first epoch.
    pub kernel_scale: f64,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            input_dim: 4,
            hidden1: 32,
            hidden2: 64,
            n_classes: 32,
            kernels: 4,
            embed_dim: 3,
            leaky_slope: 0.01,
            neighborhood_size: 7,
            kernel_scale: 1.0,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    /// (input, output) map counts of each of the three layers.
    pub fn layer_dims(&self) -> [(usize, usize); 3] {
        [
            (self.input_dim, self.hidden1),
            (self.hidden1, self.hidden2),
            (self.hidden2, self.n_classes),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for v in [
            self.input_dim,
            self.hidden1,
            self.hidden2,
            self.n_classes,
            self.kernels,
            self.embed_dim,
            self.neighborhood_size,
        ] {
            if v == 0 {
                return Err(Error::Config("network sizes must be >= 1".into()));
            }
        }
        if !(self.kernel_scale > 0.0) {
            return Err(Error::Config("kernel_scale must be > 0".into()));
        }
        Ok(())
    }
}

/// Trainable parameters of one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Kernel weights, indexed [output map p][input map q][kernel k].
    pub w: Array3<f64>,
    pub b: Array1<f64>,
    /// Kernel means, indexed [kernel k][coordinate].
    pub mu: Array2<f64>,
    /// Kernel precisions stored as log(sigma) so sigma stays positive.
    pub log_sigma: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub layers: Vec<LayerParams>,
}

/// Gradients, same shapes as the parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub w: Array3<f64>,
    pub b: Array1<f64>,
    pub mu: Array2<f64>,
    pub log_sigma: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct NetworkGrads {
    pub layers: Vec<LayerGrads>,
}

impl NetworkParams {
    /// Scaled-uniform weights, zero biases, small random kernel means,
    /// sigma = 1.
    pub fn init(config: &NetworkConfig) -> Result<NetworkParams> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut layers = Vec::with_capacity(3);
        for (m_in, m_out) in config.layer_dims() {
            let k = config.kernels;
            // Surface signals are smooth, so the |N(i)| neighborhood terms
            // add coherently rather than cancel: the neighborhood factor
            // enters the effective fan-in squared.
            let fan_in = config.neighborhood_size.pow(2) * m_in * k;
            let bound = (6.0 / (fan_in + m_out) as f64).sqrt();
            let w = Array3::from_shape_fn((m_out, m_in, k), |_| rng.gen_range(-bound..bound));
            let b = Array1::zeros(m_out);
            let mu = Array2::from_shape_fn((k, config.embed_dim), |_| {
                config.kernel_scale * standard_normal(&mut rng)
            });
            let log_sigma = Array1::from_elem(k, 2.0f64.ln() - 2.0 * config.kernel_scale.ln());
            layers.push(LayerParams {
                w,
                b,
                mu,
                log_sigma,
            });
        }
        Ok(NetworkParams {
            config: config.clone(),
            layers,
        })
    }

    pub fn zero_grads(&self) -> NetworkGrads {
        NetworkGrads {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrads {
                    w: Array3::zeros(l.w.dim()),
                    b: Array1::zeros(l.b.dim()),
                    mu: Array2::zeros(l.mu.dim()),
                    log_sigma: Array1::zeros(l.log_sigma.dim()),
                })
                .collect(),
        }
    }

    /// theta -= lr * grad. Kernel parameters are skipped in frozen mode.
    pub fn apply_step(&mut self, grads: &NetworkGrads, lr: f64, frozen_kernels: bool) {
        for (layer, grad) in self.layers.iter_mut().zip(&grads.layers) {
            layer.w.scaled_add(-lr, &grad.w);
            layer.b.scaled_add(-lr, &grad.b);
            if !frozen_kernels {
                layer.mu.scaled_add(-lr, &grad.mu);
                layer.log_sigma.scaled_add(-lr, &grad.log_sigma);
            }
        }
    }
}

impl NetworkGrads {
    pub fn accumulate(&mut self, other: &NetworkGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
            a.mu += &b.mu;
            a.log_sigma += &b.log_sigma;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.w *= s;
            l.b *= s;
            l.mu *= s;
            l.log_sigma *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m = 0.0f64;
        for l in &self.layers {
            for v in l.w.iter().chain(l.b.iter()).chain(l.mu.iter()).chain(l.log_sigma.iter()) {
                m = m.max(v.abs());
            }
        }
        m
    }

    pub fn sq_norm(&self) -> f64 {
        let mut s = 0.0f64;
        for l in &self.layers {
            for v in l.w.iter().chain(l.b.iter()).chain(l.mu.iter()).chain(l.log_sigma.iter()) {
                s += v * v;
            }
        }
        s
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Gaussian kernel phi = exp(-sigma * ||(u_j - u_i) - mu||^2).
pub fn gaussian_kernel(u_i: &[f64], u_j: &[f64], mu: &[f64], sigma: f64) -> f64 {
    let mut s = 0.0;
    for ((a, b), m) in u_i.iter().zip(u_j).zip(mu) {
        let e = (b - a) - m;
        s += e * e;
    }
    (-sigma * s).exp()
}

/// Leaky ReLU value and derivative; the derivative at exactly zero is 1.
pub fn leaky_relu(z: f64, slope: f64) -> (f64, f64) {
    if z >= 0.0 {
        (z, 1.0)
    } else {
        (slope * z, slope)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Sum of -log p over labeled nodes (label -1 = unlabeled), with the log
/// argument clamped. Returns the labeled-node count alongside.
pub fn cross_entropy(probs: &Array2<f64>, labels: &[i64]) -> Result<(f64, usize)> {
    let c = probs.ncols();
    let mut loss = 0.0;
    let mut count = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 {
            continue;
        }
        if l as usize >= c {
            return Err(Error::LabelOutOfRange {
                node: i,
                label: l,
                n_classes: c,
            });
        }
        loss -= probs[(i, l as usize)].max(CROSS_ENTROPY_CLAMP).ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoLabeledNodes);
    }
    Ok((loss, count))
}

/// Node neighborhoods (with self entries) plus the per-arc kernel
/// coordinate offsets. Built once per subject; arcs are fixed across epochs.
#[derive(Debug, Clone)]
pub struct ConvGraph {
    pub offsets: Vec<usize>,
    pub neighbors: Vec<u32>,
    /// delta_ij = u_j - u_i per arc, row-major n_arcs x embed_dim.
    pub deltas: Array2<f64>,
}

impl ConvGraph {
    /// `coords` must be the same coordinates the features were built from.
    pub fn new(graph: &BrainGraph, coords: &Array2<f64>) -> Result<ConvGraph> {
        let n = graph.n_nodes();
        if coords.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "coords have {} rows, graph has {n} nodes",
                coords.nrows()
            )));
        }
        let lists = graph.neighbor_lists_with_self();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for list in &lists {
            neighbors.extend(list.iter().map(|&j| j as u32));
            offsets.push(neighbors.len());
        }
        let d = coords.ncols();
        let mut deltas = Array2::zeros((neighbors.len(), d));
        for i in 0..n {
            for a in offsets[i]..offsets[i + 1] {
                let j = neighbors[a] as usize;
                for t in 0..d {
                    deltas[(a, t)] = coords[(j, t)] - coords[(i, t)];
                }
            }
        }
        Ok(ConvGraph {
            offsets,
            neighbors,
            deltas,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_arcs(&self) -> usize {
        self.neighbors.len()
    }
}

/// Everything the backward pass needs from a forward evaluation.
pub struct ForwardCache {
    /// Input of each layer; entry 0 is the feature matrix.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    preacts: Vec<Array2<f64>>,
    /// Kernel values per layer, n_arcs x K.
    phis: Vec<Array2<f64>>,
    /// Gathered neighborhoods per layer, N x (K * M_in).
    gathered: Vec<Array2<f64>>,
    /// Softmax output.
    pub probs: Array2<f64>,
}

fn kernel_values(layer: &LayerParams, graph: &ConvGraph) -> Array2<f64> {
    let k = layer.log_sigma.len();
    let n_arcs = graph.n_arcs();
    let d = graph.deltas.ncols();
    let mut phis = Array2::zeros((n_arcs, k));
    let deltas = graph.deltas.as_slice().expect("standard layout");
    for kk in 0..k {
        let sigma = layer.log_sigma[kk].exp();
        let mu = layer.mu.row(kk);
        let mu = mu.as_slice().expect("contiguous");
        for arc in 0..n_arcs {
            let delta = &deltas[arc * d..arc * d + d];
            let mut s = 0.0;
            for t in 0..d {
                let e = delta[t] - mu[t];
                s += e * e;
            }
            phis[(arc, kk)] = (-sigma * s).exp();
        }
    }
    phis
}

/// G[i, k*M + q] = sum_{j in N(i)} phi_k(i, j) * y_jq.
fn gather(graph: &ConvGraph, phis: &Array2<f64>, y: &Array2<f64>) -> Array2<f64> {
    let n = graph.n_nodes();
    let m = y.ncols();
    let k = phis.ncols();
    let mut g = Array2::zeros((n, k * m));
    let y_flat = y.as_slice().expect("standard layout");
    let g_flat = g.as_slice_mut().expect("standard layout");
    let phis_flat = phis.as_slice().expect("standard layout");
    for i in 0..n {
        let g_row = &mut g_flat[i * k * m..(i + 1) * k * m];
        for a in graph.offsets[i]..graph.offsets[i + 1] {
            let j = graph.neighbors[a] as usize;
            let y_row = &y_flat[j * m..(j + 1) * m];
            for kk in 0..k {
                let phi = phis_flat[a * k + kk];
                let dst = &mut g_row[kk * m..(kk + 1) * m];
                for (dq, yq) in dst.iter_mut().zip(y_row) {
                    *dq += phi * yq;
                }
            }
        }
    }
    g
}

/// W reshaped to (K*M_in) x M_out so the layer is a single matmul:
/// Wflat[k*M + q, p] = w[p][q][k].
fn flatten_weights(layer: &LayerParams) -> Array2<f64> {
    let (p_dim, q_dim, k_dim) = layer.w.dim();
    let mut flat = Array2::zeros((k_dim * q_dim, p_dim));
    for p in 0..p_dim {
        for q in 0..q_dim {
            for k in 0..k_dim {
                flat[(k * q_dim + q, p)] = layer.w[(p, q, k)];
            }
        }
    }
    flat
}

/// One layer's pre-activations for an arbitrary input feature map.
pub fn layer_forward(layer: &LayerParams, graph: &ConvGraph, y: &Array2<f64>) -> Array2<f64> {
    let phis = kernel_values(layer, graph);
    let g = gather(graph, &phis, y);
    let mut z = g.dot(&flatten_weights(layer));
    z += &layer.b;
    z
}

/// Full forward pass; keeps everything the backward pass needs.
pub fn forward(
    params: &NetworkParams,
    features: &Array2<f64>,
    graph: &ConvGraph,
) -> Result<ForwardCache> {
    if features.ncols() != params.config.input_dim {
        return Err(Error::DimensionMismatch(format!(
            "features have {} maps, network expects {}",
            features.ncols(),
            params.config.input_dim
        )));
    }
    if features.nrows() != graph.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "features have {} rows, graph has {} nodes",
            features.nrows(),
            graph.n_nodes()
        )));
    }
    if graph.deltas.ncols() != params.config.embed_dim {
        return Err(Error::DimensionMismatch(format!(
            "graph coordinates have dim {}, network expects {}",
            graph.deltas.ncols(),
            params.config.embed_dim
        )));
    }
    let slope = params.config.leaky_slope;

    let mut inputs = Vec::with_capacity(3);
    let mut preacts = Vec::with_capacity(3);
    let mut phis_all = Vec::with_capacity(3);
    let mut gathered = Vec::with_capacity(3);

    let mut y = features.clone();
    for layer in &params.layers {
        let phis = kernel_values(layer, graph);
        let g = gather(graph, &phis, &y);
        let mut z = g.dot(&flatten_weights(layer));
        z += &layer.b;
        inputs.push(y);
        phis_all.push(phis);
        gathered.push(g);
        y = z.mapv(|v| leaky_relu(v, slope).0);
        preacts.push(z);
    }
    let probs = softmax_rows(&y);
    Ok(ForwardCache {
        inputs,
        preacts,
        phis: phis_all,
        gathered,
        probs,
    })
}

/// Analytic gradients of the summed cross-entropy. `frozen_kernels` zeroes
/// the kernel-parameter gradients (pointwise ablation). Returns
/// (loss, labeled count, grads).
pub fn backward(
    params: &NetworkParams,
    graph: &ConvGraph,
    cache: &ForwardCache,
    labels: &[i64],
    frozen_kernels: bool,
) -> Result<(f64, usize, NetworkGrads)> {
    let n = graph.n_nodes();
    if labels.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {n} nodes",
            labels.len()
        )));
    }
    let (loss, count) = cross_entropy(&cache.probs, labels)?;
    let slope = params.config.leaky_slope;
    let c = params.config.n_classes;

    // d loss / d y3 (post-activation of the last layer): the standard
    // softmax + cross-entropy composite p - s. The value clamp only guards
    // the log; the composite gradient stays exact and keeps saturated
    // nodes recoverable.
    let mut d_y = Array2::zeros((n, c));
    for (i, &l) in labels.iter().enumerate() {
        if l < 0 {
            continue;
        }
        let l = l as usize;
        for j in 0..c {
            d_y[(i, j)] = cache.probs[(i, j)] - if j == l { 1.0 } else { 0.0 };
        }
    }

    let mut grads = params.zero_grads();
    for (l_idx, layer) in params.layers.iter().enumerate().rev() {
        let z = &cache.preacts[l_idx];
        let y_in = &cache.inputs[l_idx];
        let phis = &cache.phis[l_idx];
        let g = &cache.gathered[l_idx];

        // Through the activation.
        let mut d_z = d_y;
        for (dz, zv) in d_z.iter_mut().zip(z.iter()) {
            *dz *= leaky_relu(*zv, slope).1;
        }

        let grad = &mut grads.layers[l_idx];
        grad.b = d_z.sum_axis(Axis(0));
        let d_wflat = g.t().dot(&d_z); // (K*M) x P
        let (p_dim, q_dim, k_dim) = layer.w.dim();
        for p in 0..p_dim {
            for q in 0..q_dim {
                for k in 0..k_dim {
                    grad.w[(p, q, k)] = d_wflat[(k * q_dim + q, p)];
                }
            }
        }

        let d_g = d_z.dot(&flatten_weights(layer).t()); // N x (K*M)

        // Scatter back through the gather and the kernels.
        let m = q_dim;
        let k = k_dim;
        let d = graph.deltas.ncols();
        let mut d_y_in = Array2::zeros((n, m));
        let need_kernel_grads = !frozen_kernels;
        let sigmas: Vec<f64> = layer.log_sigma.iter().map(|v| v.exp()).collect();
        {
            let y_flat = y_in.as_slice().expect("standard layout");
            let dg_flat = d_g.as_slice().expect("standard layout");
            let phis_flat = phis.as_slice().expect("standard layout");
            let deltas_flat = graph.deltas.as_slice().expect("standard layout");
            let dy_flat = d_y_in.as_slice_mut().expect("standard layout");
            for i in 0..n {
                let dg_row = &dg_flat[i * k * m..(i + 1) * k * m];
                for a in graph.offsets[i]..graph.offsets[i + 1] {
                    let j = graph.neighbors[a] as usize;
                    let y_row = &y_flat[j * m..(j + 1) * m];
                    for kk in 0..k {
                        let phi = phis_flat[a * k + kk];
                        let dg_blk = &dg_row[kk * m..(kk + 1) * m];
                        // dY[j] += phi * dG[i, k-block]
                        let dy_row = &mut dy_flat[j * m..(j + 1) * m];
                        let mut d_phi = 0.0;
                        for q in 0..m {
                            dy_row[q] += phi * dg_blk[q];
                            d_phi += dg_blk[q] * y_row[q];
                        }
                        if need_kernel_grads {
                            let delta = &deltas_flat[a * d..a * d + d];
                            let coeff = d_phi * phi;
                            let sigma = sigmas[kk];
                            let mut e_norm2 = 0.0;
                            for t in 0..d {
                                let e = delta[t] - layer.mu[(kk, t)];
                                grad.mu[(kk, t)] += coeff * 2.0 * sigma * e;
                                e_norm2 += e * e;
                            }
                            grad.log_sigma[kk] += coeff * (-e_norm2) * sigma;
                        }
                    }
                }
            }
        }
        d_y = d_y_in;
    }
    Ok((loss, count, grads))
}

/// Hard labels by row argmax; ties go to the lowest index.
pub fn argmax_labels(probs: &Array2<f64>) -> Vec<i64> {
    probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            best as i64
        })
        .collect()
}

/// Reference 1-D grid convolution with zero padding:
/// z[i][p] = sum_q sum_{t=-K..K} w[p][q][t+K] * y[i+t][q] + b[p].
pub fn grid_conv_1d(
    y: &Array2<f64>,
    w: &Array3<f64>,
    b: &Array1<f64>,
    half_width: usize,
) -> Array2<f64> {
    let (len, q_dim) = y.dim();
    let (p_dim, wq, taps) = w.dim();
    assert_eq!(wq, q_dim);
    assert_eq!(taps, 2 * half_width + 1);
    let mut z = Array2::zeros((len, p_dim));
    for i in 0..len {
        for p in 0..p_dim {
            let mut acc = b[p];
            for q in 0..q_dim {
                for t in 0..taps {
                    let src = i as i64 + t as i64 - half_width as i64;
                    if src < 0 || src >= len as i64 {
                        continue;
                    }
                    acc += w[(p, q, t)] * y[(src as usize, q)];
                }
            }
            z[(i, p)] = acc;
        }
    }
    z
}

// --- checkpoint io ---------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"SPNC";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointFormat {
    Binary,
    Json,
}

/// Writes a checkpoint. The binary layout is the version header, a JSON
/// network config, then per layer the arrays w (row-major [p][q][k]), b,
/// mu (row-major [k][dim]) and log_sigma as little-endian f64.
pub fn save_checkpoint(path: &Path, params: &NetworkParams, format: CheckpointFormat) -> Result<()> {
    match format {
        CheckpointFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(params).expect("serializable");
            bytes.push(b'\n');
            fs::write(path, bytes).map_err(|e| Error::io(path, e))
        }
        CheckpointFormat::Binary => {
            let mut out = Vec::new();
            out.extend_from_slice(CHECKPOINT_MAGIC);
            out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
            let header = serde_json::to_vec(&params.config).expect("serializable");
            out.extend_from_slice(&(header.len() as u64).to_le_bytes());
            out.extend_from_slice(&header);
            let mut push = |vals: &mut dyn Iterator<Item = &f64>| {
                for v in vals {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            };
            for layer in &params.layers {
                push(&mut layer.w.iter());
                push(&mut layer.b.iter());
                push(&mut layer.mu.iter());
                push(&mut layer.log_sigma.iter());
            }
            let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            f.write_all(&out).map_err(|e| Error::io(path, e))
        }
    }
}

pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() >= 4 && &bytes[..4] == CHECKPOINT_MAGIC {
        let fail = |msg: &str| Error::parse(path, 0, msg.to_string());
        if bytes.len() < 16 {
            return Err(fail("truncated header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(fail(&format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + header_len {
            return Err(fail("truncated config header"));
        }
        let config: NetworkConfig = serde_json::from_slice(&bytes[16..16 + header_len])
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        config.validate()?;

        let mut cursor = 16 + header_len;
        let mut take = |count: usize| -> Result<Vec<f64>> {
            let need = count * 8;
            if bytes.len() < cursor + need {
                return Err(Error::parse(path, 0, "truncated parameter data"));
            }
            let vals = bytes[cursor..cursor + need]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cursor += need;
            Ok(vals)
        };
        let k = config.kernels;
        let d = config.embed_dim;
        let mut layers = Vec::with_capacity(3);
        for (m_in, m_out) in config.layer_dims() {
            let w = Array3::from_shape_vec((m_out, m_in, k), take(m_out * m_in * k)?)
                .expect("shape matches");
            let b = Array1::from_vec(take(m_out)?);
            let mu = Array2::from_shape_vec((k, d), take(k * d)?).expect("shape matches");
            let log_sigma = Array1::from_vec(take(k)?);
            layers.push(LayerParams {
                w,
                b,
                mu,
                log_sigma,
            });
        }
        if cursor != bytes.len() {
            return Err(Error::parse(path, 0, "trailing bytes in checkpoint"));
        }
        Ok(NetworkParams { config, layers })
    } else {
        let params: NetworkParams = serde_json::from_slice(&bytes)
            .map_err(|e| Error::parse(path, 0, e.to_string()))?;
        params.config.validate()?;
        Ok(params)
    }
}
