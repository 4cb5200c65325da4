//! Full-batch gradient-descent training with early stopping on the
//! validation mean Dice.
//!
//! One epoch accumulates the loss gradient over every training subject
//! (summed cross-entropy), then takes a single step on the per-labeled-node
//! mean so the learning rate is independent of the cohort size. Per-subject
//! passes may run in parallel; the accumulation order is fixed, so results
//! do not depend on the worker count.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;

use crate::embedding::SpectralEmbedding;
use crate::error::{Error, Result};
use crate::features::{build_feature_matrix, FeatureMode};
use crate::graph::{AdjacencyMode, BrainGraph};
use crate::mesh::SurfaceMesh;
use crate::metrics::dice_per_parcel;
use crate::net::{argmax_labels, backward, forward, ConvGraph, NetworkConfig, NetworkParams};

/// The three experiment modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Raw spatial coordinates as kernel/feature coordinates.
    Euclidean,
    /// Aligned spectral coordinates, mesh neighborhoods.
    Spectral,
    /// Aligned spectral coordinates, identity adjacency, frozen kernels.
    PointwiseSpectral,
}

impl TrainMode {
    pub fn frozen_kernels(self) -> bool {
        matches!(self, TrainMode::PointwiseSpectral)
    }

    pub fn adjacency(self) -> AdjacencyMode {
        match self {
            TrainMode::PointwiseSpectral => AdjacencyMode::Identity,
            _ => AdjacencyMode::MeshEdges,
        }
    }

    pub fn feature_mode(self) -> FeatureMode {
        match self {
            TrainMode::Euclidean => FeatureMode::Euclidean,
            _ => FeatureMode::Spectral,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Euclidean => "euclidean",
            TrainMode::Spectral => "spectral",
            TrainMode::PointwiseSpectral => "pointwise",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(TrainMode::Euclidean),
            "spectral" => Ok(TrainMode::Spectral),
            "pointwise" | "pointwise-spectral" => Ok(TrainMode::PointwiseSpectral),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub mode: TrainMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            max_epochs: 300,
            patience: 10,
            mode: TrainMode::Spectral,
            seed: 0,
        }
    }
}

/// Everything the network needs for one subject, precomputed per mode.
#[derive(Debug, Clone)]
pub struct SubjectTensors {
    pub id: String,
    pub features: Array2<f64>,
    pub conv: ConvGraph,
    pub labels: Vec<i64>,
}

/// Builds per-subject tensors for a mode. Spectral modes need the aligned
/// embedding; the kernel coordinates are the feature coordinate columns.
pub fn prepare_subject(
    id: &str,
    mesh: &SurfaceMesh,
    embedding: Option<&SpectralEmbedding>,
    mode: TrainMode,
) -> Result<SubjectTensors> {
    let mesh_graph = BrainGraph::from_mesh(mesh, AdjacencyMode::MeshEdges)?;
    let features = build_feature_matrix(&mesh_graph, embedding, mode.feature_mode())?;
    let d = features.ncols() - 1;
    let coords = features.slice(ndarray::s![.., 0..d]).to_owned();
    let conv_graph = match mode.adjacency() {
        AdjacencyMode::MeshEdges => mesh_graph,
        AdjacencyMode::Identity => BrainGraph::from_mesh(mesh, AdjacencyMode::Identity)?,
    };
    let conv = ConvGraph::new(&conv_graph, &coords)?;
    let labels = mesh
        .labels
        .clone()
        .unwrap_or_else(|| vec![-1; mesh.n_vertices()]);
    Ok(SubjectTensors {
        id: id.to_string(),
        features,
        conv,
        labels,
    })
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean cross-entropy per labeled training node.
    pub loss: f64,
    pub val_accuracy: f64,
    pub val_dice: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub diverged: bool,
}

impl TrainLog {
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut text = String::from("epoch,loss,val_acc,val_dice,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(
                text,
                "{},{},{},{},{:.3}",
                e.epoch, e.loss, e.val_accuracy, e.val_dice, e.seconds
            );
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Forward pass only: probabilities plus argmax labels.
pub fn predict(params: &NetworkParams, subject: &SubjectTensors) -> Result<(Array2<f64>, Vec<i64>)> {
    let cache = forward(params, &subject.features, &subject.conv)?;
    let hard = argmax_labels(&cache.probs);
    Ok((cache.probs, hard))
}

/// Mean accuracy and mean Dice (over all classes, then over subjects).
fn validate(
    params: &NetworkParams,
    subjects: &[SubjectTensors],
    n_classes: usize,
) -> Result<(f64, f64)> {
    if subjects.is_empty() {
        return Ok((0.0, 0.0));
    }
    let scores: Vec<Result<(f64, f64)>> = subjects
        .par_iter()
        .map(|s| {
            let (_, pred) = predict(params, s)?;
            let acc = crate::metrics::node_accuracy(&pred, &s.labels)?;
            let dice = (0..n_classes)
                .map(|c| dice_per_parcel(&pred, &s.labels, c as i64))
                .sum::<f64>()
                / n_classes as f64;
            Ok((acc, dice))
        })
        .collect();
    let mut acc_sum = 0.0;
    let mut dice_sum = 0.0;
    for s in scores {
        let (a, d) = s?;
        acc_sum += a;
        dice_sum += d;
    }
    let n = subjects.len() as f64;
    Ok((acc_sum / n, dice_sum / n))
}

/// Mean cross-entropy per labeled node over a subject set.
fn mean_loss(params: &NetworkParams, subjects: &[SubjectTensors]) -> Result<f64> {
    let per_subject: Vec<Result<(f64, usize)>> = subjects
        .par_iter()
        .map(|s| {
            let cache = forward(params, &s.features, &s.conv)?;
            crate::net::cross_entropy(&cache.probs, &s.labels)
        })
        .collect();
    let mut loss = 0.0;
    let mut count = 0usize;
    for r in per_subject {
        let (l, c) = r?;
        loss += l;
        count += c;
    }
    Ok(loss / count as f64)
}

/// Trains the network. Returns the parameters with the best validation
/// mean Dice (the final parameters when no validation subjects are given)
/// and the per-epoch log. A non-finite loss aborts the loop and the last
/// good checkpoint is returned with `diverged` set.
///
/// Each epoch takes a single gradient step; the step size starts at the
/// configured learning rate and is adapted by Armijo backtracking, which
/// keeps full-batch descent stable without momentum or weight decay.
pub fn train(
    train_subjects: &[SubjectTensors],
    val_subjects: &[SubjectTensors],
    cfg: &TrainConfig,
    netcfg: &NetworkConfig,
) -> Result<(NetworkParams, TrainLog)> {
    if train_subjects.is_empty() {
        return Err(Error::TooFewSubjects { min: 1, got: 0 });
    }
    for s in train_subjects {
        if let Some(&l) = s.labels.iter().find(|&&l| l >= netcfg.n_classes as i64) {
            return Err(Error::LabelOutOfRange {
                node: 0,
                label: l,
                n_classes: netcfg.n_classes,
            });
        }
    }
    let frozen = cfg.mode.frozen_kernels();
    let mut params = NetworkParams::init(netcfg)?;
    let mut best = params.clone();
    let mut best_dice = f64::NEG_INFINITY;
    let mut log = TrainLog::default();
    let mut step = cfg.learning_rate;
    let step_cap = cfg.learning_rate * 1e3;

    for epoch in 1..=cfg.max_epochs {
        let tick = Instant::now();
        let per_subject: Vec<Result<(f64, usize, crate::net::NetworkGrads)>> = train_subjects
            .par_iter()
            .map(|s| {
                let cache = forward(&params, &s.features, &s.conv)?;
                backward(&params, &s.conv, &cache, &s.labels, frozen)
            })
            .collect();

        let mut grads = params.zero_grads();
        let mut loss_sum = 0.0;
        let mut count = 0usize;
        for r in per_subject {
            let (l, c, g) = r?;
            loss_sum += l;
            count += c;
            grads.accumulate(&g);
        }
        let mean_loss_before = loss_sum / count as f64;
        if !mean_loss_before.is_finite() {
            log.diverged = true;
            log::warn!("training diverged at epoch {epoch}; keeping the last good checkpoint");
            break;
        }
        grads.scale(1.0 / count as f64);
        let g_norm2 = grads.sq_norm();

        // Armijo backtracking: halve the step until it actually descends.
        let mut accepted = params.clone();
        for _ in 0..=30 {
            let mut candidate = params.clone();
            candidate.apply_step(&grads, step, frozen);
            let after = mean_loss(&candidate, train_subjects)?;
            if after.is_finite() && after <= mean_loss_before - 1e-4 * step * g_norm2 {
                accepted = candidate;
                break;
            }
            step /= 2.0;
            if step * g_norm2.sqrt() < 1e-16 {
                break; // no usable descent direction left
            }
        }
        params = accepted;
        step = (step * 1.5).min(step_cap);

        let (val_acc, val_dice) = validate(&params, val_subjects, netcfg.n_classes)?;
        log.epochs.push(EpochLog {
            epoch,
            loss: mean_loss_before,
            val_accuracy: val_acc,
            val_dice,
            seconds: tick.elapsed().as_secs_f64(),
        });

        if val_subjects.is_empty() {
            best = params.clone();
            log.best_epoch = epoch;
        } else if val_dice > best_dice {
            best_dice = val_dice;
            best = params.clone();
            log.best_epoch = epoch;
        } else if epoch - log.best_epoch >= cfg.patience {
            break;
        }
    }
    Ok((best, log))
}
