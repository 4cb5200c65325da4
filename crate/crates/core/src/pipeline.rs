//! Batch pipeline: synth -> embed -> align -> train -> predict ->
//! regularize -> evaluate, with a run manifest.
//!
//! Every stage writes plain-text artifacts that the next stage validates
//! and reads back, so stages can also be driven individually from the CLI.
//! All outputs except wall-clock fields (train logs, manifest timings) are
//! pure functions of the configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::{icp_align, AlignmentResult, ICP_MAX_ITERS, ICP_TOL};
use crate::eigen::{smallest_eigenpairs, EigenOptions};
use crate::embedding::{spectral_coordinates, SpectralEmbedding};
use crate::error::{Error, Result};
use crate::graph::{AdjacencyMode, BrainGraph};
use crate::mesh::{load_subject_dir, save_subject_dir, SurfaceMesh};
use crate::metrics::{evaluate_parcellation, HausdorffVariant, ParcelMetrics};
use crate::mrf::{alpha_expansion, unary_argmin, MrfProblem};
use crate::net::{load_checkpoint, save_checkpoint, CheckpointFormat, NetworkConfig, NetworkParams};
use crate::report::{emit_report, ModeRun, Summary};
use crate::split::{split_dataset, DatasetSplit};
use crate::synth::generate_synthetic_surface;
use crate::train::{predict, prepare_subject, train, SubjectTensors, TrainConfig, TrainMode};

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub n_subjects: usize,
    pub n_vertices: usize,
    pub n_parcels: usize,
    pub deform_amplitude: f64,
    pub seed: u64,
    pub embed_dim: usize,
    pub modes: Vec<TrainMode>,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub lambda_sweep: Vec<f64>,
    pub reference: Option<String>,
    pub hausdorff: HausdorffVariant,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_subjects: 10,
            n_vertices: 2562,
            n_parcels: 32,
            deform_amplitude: 0.3,
            seed: 7,
            embed_dim: 3,
            modes: vec![
                TrainMode::Euclidean,
                TrainMode::Spectral,
                TrainMode::PointwiseSpectral,
            ],
            learning_rate: 0.01,
            max_epochs: 300,
            patience: 10,
            lambda_sweep: vec![0.1, 0.2, 0.5, 1.0, 2.0],
            reference: None,
            hausdorff: HausdorffVariant::Boundary,
        }
    }
}

impl PipelineConfig {
    /// Parses a `key = value` config file; `#` starts a comment.
    pub fn from_key_values(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(path, idx + 1, "expected `key = value`"))?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::parse(path, idx + 1, e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::Config(format!("{key}: {e}"));
        match key {
            "n_subjects" => self.n_subjects = value.parse().map_err(|e| bad(&e))?,
            "n_vertices" => self.n_vertices = value.parse().map_err(|e| bad(&e))?,
            "n_parcels" => self.n_parcels = value.parse().map_err(|e| bad(&e))?,
            "deform_amplitude" => self.deform_amplitude = value.parse().map_err(|e| bad(&e))?,
            "seed" => self.seed = value.parse().map_err(|e| bad(&e))?,
            "d" | "embed_dim" => self.embed_dim = value.parse().map_err(|e| bad(&e))?,
            "modes" | "mode" => {
                self.modes = value
                    .split(',')
                    .map(|m| TrainMode::parse(m.trim()))
                    .collect::<Result<_>>()?;
            }
            "learning_rate" => self.learning_rate = value.parse().map_err(|e| bad(&e))?,
            "max_epochs" => self.max_epochs = value.parse().map_err(|e| bad(&e))?,
            "patience" => self.patience = value.parse().map_err(|e| bad(&e))?,
            "lambda_sweep" => {
                self.lambda_sweep = value
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(&e))?;
            }
            "reference" => self.reference = Some(value.to_string()),
            "hausdorff" => {
                self.hausdorff = match value {
                    "boundary" => HausdorffVariant::Boundary,
                    "full" => HausdorffVariant::FullParcel,
                    "p95" => HausdorffVariant::Percentile95,
                    other => return Err(Error::Config(format!("unknown hausdorff {other:?}"))),
                };
            }
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Resolved configuration as sorted key = value pairs.
    pub fn to_key_values(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        m.insert("n_subjects".into(), self.n_subjects.to_string());
        m.insert("n_vertices".into(), self.n_vertices.to_string());
        m.insert("n_parcels".into(), self.n_parcels.to_string());
        m.insert("deform_amplitude".into(), self.deform_amplitude.to_string());
        m.insert("seed".into(), self.seed.to_string());
        m.insert("embed_dim".into(), self.embed_dim.to_string());
        m.insert(
            "modes".into(),
            self.modes
                .iter()
                .map(|m| m.as_str())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.insert("learning_rate".into(), self.learning_rate.to_string());
        m.insert("max_epochs".into(), self.max_epochs.to_string());
        m.insert("patience".into(), self.patience.to_string());
        m.insert(
            "lambda_sweep".into(),
            self.lambda_sweep
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        m.insert(
            "reference".into(),
            self.reference.clone().unwrap_or_default(),
        );
        m.insert(
            "hausdorff".into(),
            match self.hausdorff {
                HausdorffVariant::Boundary => "boundary",
                HausdorffVariant::FullParcel => "full",
                HausdorffVariant::Percentile95 => "p95",
            }
            .into(),
        );
        m
    }

    pub fn network_config(&self, mode: TrainMode) -> NetworkConfig {
        NetworkConfig {
            input_dim: self.embed_dim + 1,
            n_classes: self.n_parcels,
            embed_dim: self.embed_dim,
            neighborhood_size: match mode.adjacency() {
                AdjacencyMode::Identity => 1,
                AdjacencyMode::MeshEdges => 7,
            },
            seed: self.seed,
            ..NetworkConfig::default()
        }
    }

    pub fn train_config(&self, mode: TrainMode) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            mode,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub artifacts: Vec<String>,
}

/// Run provenance: configuration snapshot, subjects, stage timings and
/// artifact paths. Written atomically at the end of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: BTreeMap<String, String>,
    pub seed: u64,
    pub subjects: Vec<String>,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn save_atomic(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("serializable");
        bytes.push(b'\n');
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }
}

fn subject_id(i: usize) -> String {
    format!("sub-{i:03}")
}

fn subject_seed(cohort_seed: u64, i: usize) -> u64 {
    cohort_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Generates `n_subjects` labeled surfaces in the internal format.
pub fn synth_cohort(data_dir: &Path, cfg: &PipelineConfig) -> Result<Vec<String>> {
    fs::create_dir_all(data_dir).map_err(|e| Error::io(data_dir, e))?;
    let ids: Vec<String> = (0..cfg.n_subjects).map(subject_id).collect();
    let results: Vec<Result<()>> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|i| {
            let mesh = generate_synthetic_surface(
                subject_seed(cfg.seed, i),
                cfg.n_vertices,
                cfg.n_parcels,
                cfg.deform_amplitude,
            )?;
            save_subject_dir(&data_dir.join(subject_id(i)), &mesh)
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(ids)
}

/// Sorted subject ids found in a data directory.
pub fn list_subjects(data_dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    let entries = fs::read_dir(data_dir).map_err(|e| Error::io(data_dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(data_dir, e))?;
        if entry.path().join("mesh.off").is_file() {
            ids.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::MissingArtifact {
            path: data_dir.to_path_buf(),
            hint: "no subject directories with mesh.off found".into(),
        });
    }
    Ok(ids)
}

pub fn embed_dir(out_dir: &Path, id: &str) -> PathBuf {
    out_dir.join("embed").join(id)
}

/// Computes spectral coordinates for the listed subjects and writes
/// `spectral.txt` + `eigenvalues.txt` per subject.
pub fn embed_subjects(
    data_dir: &Path,
    out_dir: &Path,
    ids: &[String],
    cfg: &PipelineConfig,
) -> Result<()> {
    let results: Vec<Result<()>> = ids
        .par_iter()
        .map(|id| {
            let mesh = load_subject_dir(&data_dir.join(id))?;
            let graph = BrainGraph::from_mesh(&mesh, AdjacencyMode::MeshEdges)?;
            let lap = crate::laplacian::build_laplacian(&graph)?;
            let pairs = smallest_eigenpairs(
                &lap,
                cfg.embed_dim,
                &EigenOptions {
                    seed: cfg.seed,
                    ..EigenOptions::default()
                },
            )?;
            let emb = spectral_coordinates(&pairs, cfg.embed_dim)?;
            let dir = embed_dir(out_dir, id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            emb.save_coords(&dir.join("spectral.txt"))?;
            emb.save_eigenvalues(&dir.join("eigenvalues.txt"))?;
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(())
}

fn load_embedding(out_dir: &Path, id: &str, aligned: bool) -> Result<SpectralEmbedding> {
    let dir = embed_dir(out_dir, id);
    let name = if aligned {
        "spectral_aligned.txt"
    } else {
        "spectral.txt"
    };
    let path = dir.join(name);
    if !path.is_file() {
        return Err(Error::MissingArtifact {
            path,
            hint: format!(
                "run the {} stage for subject {id} first",
                if aligned { "align" } else { "embed" }
            ),
        });
    }
    SpectralEmbedding::load_coords(&path, Some(&dir.join("eigenvalues.txt")), aligned)
}

/// Aligns every subject's embedding to the reference subject's embedding;
/// writes `spectral_aligned.txt` + `align.json`.
pub fn align_subjects(out_dir: &Path, ids: &[String], reference: &str) -> Result<()> {
    let reference_emb = load_embedding(out_dir, reference, false)?;
    let results: Vec<Result<()>> = ids
        .par_iter()
        .map(|id| {
            let emb = load_embedding(out_dir, id, false)?;
            let (result, aligned) = icp_align(&emb, &reference_emb, ICP_MAX_ITERS, ICP_TOL)?;
            let dir = embed_dir(out_dir, id);
            aligned.save_coords(&dir.join("spectral_aligned.txt"))?;
            result.save(&dir.join("align.json"))?;
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(())
}

/// Loads the tensors of one subject for a mode, reading aligned embeddings
/// from the embed directory when the mode needs them.
pub fn load_subject_tensors(
    data_dir: &Path,
    out_dir: &Path,
    id: &str,
    mode: TrainMode,
) -> Result<SubjectTensors> {
    let mesh = load_subject_dir(&data_dir.join(id))?;
    let embedding = match mode {
        TrainMode::Euclidean => None,
        _ => Some(load_embedding(out_dir, id, true)?),
    };
    prepare_subject(id, &mesh, embedding.as_ref(), mode)
}

pub fn mode_dir(out_dir: &Path, mode: TrainMode) -> PathBuf {
    out_dir.join(mode.as_str())
}

pub fn predict_dir(out_dir: &Path, mode: TrainMode, id: &str) -> PathBuf {
    mode_dir(out_dir, mode).join("predict").join(id)
}

/// Writes an `N C` header plus one probability row per node.
pub fn save_probabilities(path: &Path, probs: &Array2<f64>) -> Result<()> {
    let mut text = String::new();
    let _ = writeln!(text, "{} {}", probs.nrows(), probs.ncols());
    for row in probs.rows() {
        let parts: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(text, "{}", parts.join(" "));
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_probabilities(path: &Path) -> Result<Array2<f64>> {
    if !path.is_file() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "run the predict stage first".into(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(path, 1, "bad `N C` header"))?;
    if dims.len() != 2 {
        return Err(Error::parse(path, 1, "expected `N C` header"));
    }
    let (n, c) = (dims[0], dims[1]);
    let mut probs = Array2::zeros((n, c));
    let mut row = 0usize;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, idx + 1, "bad probability"))?;
        if vals.len() != c || row >= n {
            return Err(Error::parse(path, idx + 1, "row shape mismatch"));
        }
        for (j, v) in vals.into_iter().enumerate() {
            probs[(row, j)] = v;
        }
        row += 1;
    }
    if row != n {
        return Err(Error::parse(path, row + 1, format!("expected {n} rows")));
    }
    Ok(probs)
}

pub fn save_labels(path: &Path, labels: &[i64]) -> Result<()> {
    let mut text = String::new();
    for l in labels {
        let _ = writeln!(text, "{l}");
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: &Path, expect: usize) -> Result<Vec<i64>> {
    if !path.is_file() {
        return Err(Error::MissingArtifact {
            path: path.to_path_buf(),
            hint: "missing label file".into(),
        });
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let labels: Vec<i64> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.trim()
                .parse()
                .map_err(|_| Error::parse(path, 0, format!("bad label {l:?}")))
        })
        .collect::<Result<_>>()?;
    if labels.len() != expect {
        return Err(Error::parse(
            path,
            labels.len(),
            format!("expected {expect} labels, found {}", labels.len()),
        ));
    }
    Ok(labels)
}

/// Mean kernel-coordinate offset norm over a subject's non-self arcs;
/// None for identity adjacency (all offsets are zero).
fn mean_arc_offset(subject: &SubjectTensors) -> Option<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for row in subject.conv.deltas.rows() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            total += norm;
            count += 1;
        }
    }
    (count > 0).then(|| total / count as f64)
}

/// Trains one mode on the split, writing `checkpoint.bin` and
/// `train_log.csv` into the mode directory.
pub fn train_mode(
    data_dir: &Path,
    out_dir: &Path,
    split: &DatasetSplit,
    mode: TrainMode,
    cfg: &PipelineConfig,
) -> Result<PathBuf> {
    let load_set = |ids: &[String]| -> Result<Vec<SubjectTensors>> {
        ids.iter()
            .map(|id| load_subject_tensors(data_dir, out_dir, id, mode))
            .collect()
    };
    let train_set = load_set(&split.train)?;
    let val_set = load_set(&split.val)?;
    let mut netcfg = cfg.network_config(mode);
    netcfg.kernel_scale = mean_arc_offset(&train_set[0]).unwrap_or(1.0);
    let (params, log) = train(&train_set, &val_set, &cfg.train_config(mode), &netcfg)?;
    let dir = mode_dir(out_dir, mode);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let ck = dir.join("checkpoint.bin");
    save_checkpoint(&ck, &params, CheckpointFormat::Binary)?;
    log.save_csv(&dir.join("train_log.csv"))?;
    Ok(ck)
}

/// Runs the forward pass for the listed subjects and writes probabilities
/// plus argmax labels per subject.
pub fn predict_subjects(
    data_dir: &Path,
    out_dir: &Path,
    checkpoint: &Path,
    ids: &[String],
    mode: TrainMode,
) -> Result<()> {
    if !checkpoint.is_file() {
        return Err(Error::MissingArtifact {
            path: checkpoint.to_path_buf(),
            hint: "run the train stage first".into(),
        });
    }
    let params = load_checkpoint(checkpoint)?;
    let results: Vec<Result<()>> = ids
        .par_iter()
        .map(|id| {
            let tensors = load_subject_tensors(data_dir, out_dir, id, mode)?;
            let (probs, hard) = predict(&params, &tensors)?;
            let dir = predict_dir(out_dir, mode, id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            save_probabilities(&dir.join("probs.txt"), &probs)?;
            save_labels(&dir.join("labels_pred.txt"), &hard)?;
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(())
}

/// Graph-cut refinement of one subject's predicted probabilities.
pub fn regularize_subject(
    data_dir: &Path,
    out_dir: &Path,
    mode: TrainMode,
    id: &str,
    lambda: f64,
) -> Result<Vec<i64>> {
    let mesh = load_subject_dir(&data_dir.join(id))?;
    let probs = load_probabilities(&predict_dir(out_dir, mode, id).join("probs.txt"))?;
    let edges: Vec<(u32, u32)> = mesh
        .edges()
        .into_iter()
        .map(|(i, j)| (i as u32, j as u32))
        .collect();
    let problem = MrfProblem::from_probabilities(&probs, edges, lambda)?;
    let init = unary_argmin(&problem);
    let result = alpha_expansion(&problem, &init)?;
    let labels: Vec<i64> = result.labels.iter().map(|&l| l as i64).collect();
    save_labels(
        &predict_dir(out_dir, mode, id).join("labels_mrf.txt"),
        &labels,
    )?;
    Ok(labels)
}

/// Picks the MRF weight by sweeping the candidates on the validation
/// subjects and keeping the best mean Dice (first on ties).
pub fn sweep_lambda(
    data_dir: &Path,
    out_dir: &Path,
    mode: TrainMode,
    val_ids: &[String],
    candidates: &[f64],
    n_classes: usize,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::Config("empty lambda sweep".into()));
    }
    let mut best = (candidates[0], f64::NEG_INFINITY);
    for &lambda in candidates {
        let mut dice_sum = 0.0;
        for id in val_ids {
            let mesh = load_subject_dir(&data_dir.join(id))?;
            let reference = mesh.labels.clone().ok_or(Error::NoLabeledNodes)?;
            let labels = regularize_subject(data_dir, out_dir, mode, id, lambda)?;
            let dice: f64 = (0..n_classes)
                .map(|c| crate::metrics::dice_per_parcel(&labels, &reference, c as i64))
                .sum::<f64>()
                / n_classes as f64;
            dice_sum += dice;
        }
        let mean = dice_sum / val_ids.len().max(1) as f64;
        if mean > best.1 {
            best = (lambda, mean);
        }
    }
    Ok(best.0)
}

/// Evaluates raw and MRF label files of one mode over the test subjects.
pub fn evaluate_mode(
    data_dir: &Path,
    out_dir: &Path,
    mode: TrainMode,
    ids: &[String],
    n_classes: usize,
    variant: HausdorffVariant,
    mrf: bool,
) -> Result<ModeRun> {
    let evals: Vec<Result<(String, ParcelMetrics)>> = ids
        .par_iter()
        .map(|id| {
            let mesh = load_subject_dir(&data_dir.join(id))?;
            let reference = mesh.labels.clone().ok_or(Error::NoLabeledNodes)?;
            let file = if mrf { "labels_mrf.txt" } else { "labels_pred.txt" };
            let pred = load_labels(
                &predict_dir(out_dir, mode, id).join(file),
                mesh.n_vertices(),
            )?;
            let metrics = evaluate_parcellation(&pred, &reference, &mesh, n_classes, variant)?;
            Ok((id.clone(), metrics))
        })
        .collect();
    let mut subjects = Vec::with_capacity(ids.len());
    for e in evals {
        subjects.push(e?);
    }
    Ok(ModeRun {
        mode: if mrf {
            format!("{}_mrf", mode.as_str())
        } else {
            mode.as_str().to_string()
        },
        subjects,
    })
}

pub struct PipelineOutcome {
    pub summary: Summary,
    pub summary_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Runs the full pipeline. `data_dir = None` synthesizes the cohort into
/// `<out_dir>/data`.
pub fn run_pipeline(
    cfg: &PipelineConfig,
    data_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<PipelineOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut stages: Vec<StageRecord> = Vec::new();
    let mut record = |name: &str, started: Instant, artifacts: Vec<PathBuf>| {
        stages.push(StageRecord {
            name: name.to_string(),
            seconds: started.elapsed().as_secs_f64(),
            artifacts: artifacts
                .into_iter()
                .map(|p| p.to_string_lossy().into_owned())
                .collect(),
        });
    };

    // Data: synthesize or take as given.
    let owned_data;
    let data_dir = match data_dir {
        Some(d) => d,
        None => {
            let t = Instant::now();
            owned_data = out_dir.join("data");
            let ids = synth_cohort(&owned_data, cfg)?;
            record(
                "synth",
                t,
                ids.iter().map(|id| owned_data.join(id)).collect(),
            );
            &owned_data
        }
    };
    let ids = list_subjects(data_dir)?;

    let t = Instant::now();
    let split = split_dataset(&ids, cfg.seed)?;
    let split_path = out_dir.join("split.txt");
    split.save(&split_path)?;
    record("split", t, vec![split_path]);

    let t = Instant::now();
    embed_subjects(data_dir, out_dir, &ids, cfg)?;
    record(
        "embed",
        t,
        ids.iter()
            .map(|id| embed_dir(out_dir, id).join("spectral.txt"))
            .collect(),
    );

    let t = Instant::now();
    let reference = match &cfg.reference {
        Some(r) => r.clone(),
        None => {
            let mut sorted = split.train.clone();
            sorted.sort();
            sorted
                .first()
                .cloned()
                .ok_or(Error::TooFewSubjects { min: 1, got: 0 })?
        }
    };
    align_subjects(out_dir, &ids, &reference)?;
    record(
        "align",
        t,
        ids.iter()
            .map(|id| embed_dir(out_dir, id).join("spectral_aligned.txt"))
            .collect(),
    );

    let mut runs = Vec::new();
    let mut lambdas = BTreeMap::new();
    for &mode in &cfg.modes {
        let t = Instant::now();
        let checkpoint = train_mode(data_dir, out_dir, &split, mode, cfg)?;
        record(&format!("train/{mode}"), t, vec![checkpoint.clone()]);

        let t = Instant::now();
        let mut predict_ids = split.val.clone();
        predict_ids.extend_from_slice(&split.test);
        predict_subjects(data_dir, out_dir, &checkpoint, &predict_ids, mode)?;
        record(
            &format!("predict/{mode}"),
            t,
            predict_ids
                .iter()
                .map(|id| predict_dir(out_dir, mode, id).join("probs.txt"))
                .collect(),
        );

        let t = Instant::now();
        let lambda = sweep_lambda(
            data_dir,
            out_dir,
            mode,
            &split.val,
            &cfg.lambda_sweep,
            cfg.n_parcels,
        )?;
        lambdas.insert(mode.as_str().to_string(), lambda);
        for id in &split.test {
            regularize_subject(data_dir, out_dir, mode, id, lambda)?;
        }
        record(
            &format!("regularize/{mode}"),
            t,
            split
                .test
                .iter()
                .map(|id| predict_dir(out_dir, mode, id).join("labels_mrf.txt"))
                .collect(),
        );

        let t = Instant::now();
        runs.push(evaluate_mode(
            data_dir,
            out_dir,
            mode,
            &split.test,
            cfg.n_parcels,
            cfg.hausdorff,
            false,
        )?);
        runs.push(evaluate_mode(
            data_dir,
            out_dir,
            mode,
            &split.test,
            cfg.n_parcels,
            cfg.hausdorff,
            true,
        )?);
        record(&format!("evaluate/{mode}"), t, vec![]);
    }

    let t = Instant::now();
    let report_dir = out_dir.join("reports");
    let summary = emit_report(&runs, &lambdas, &report_dir)?;
    let summary_path = report_dir.join("summary.json");
    record(
        "report",
        t,
        vec![summary_path.clone(), report_dir.join("metrics_per_parcel.csv")],
    );

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.to_key_values(),
        seed: cfg.seed,
        subjects: ids,
        stages,
    };
    let manifest_path = out_dir.join("manifest.json");
    manifest.save_atomic(&manifest_path)?;
    Ok(PipelineOutcome {
        summary,
        summary_path,
        manifest_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_parsing_roundtrip() {
        let text = "n_subjects = 8\nn_vertices=162\nmodes = spectral,euclidean\n\
                    lambda_sweep = 0.5,1.0\nseed = 3\n# comment\nd = 3\n";
        let cfg = PipelineConfig::from_key_values(text, Path::new("test.cfg")).unwrap();
        assert_eq!(cfg.n_subjects, 8);
        assert_eq!(cfg.n_vertices, 162);
        assert_eq!(cfg.modes, vec![TrainMode::Spectral, TrainMode::Euclidean]);
        assert_eq!(cfg.lambda_sweep, vec![0.5, 1.0]);
        assert_eq!(cfg.seed, 3);
        let kv = cfg.to_key_values();
        assert_eq!(kv["modes"], "spectral,euclidean");
    }

    #[test]
    fn bad_config_key_rejected() {
        assert!(PipelineConfig::from_key_values("nope = 3\n", Path::new("x")).is_err());
        assert!(PipelineConfig::from_key_values("just a line\n", Path::new("x")).is_err());
    }

    #[test]
    fn probabilities_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probs.txt");
        let probs = Array2::from_shape_fn((5, 3), |(i, j)| (i * 3 + j) as f64 / 15.0);
        save_probabilities(&path, &probs).unwrap();
        let loaded = load_probabilities(&path).unwrap();
        assert_eq!(loaded, probs);
    }

    #[test]
    fn missing_checkpoint_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let ck = dir.path().join("missing.bin");
        let err = predict_subjects(
            dir.path(),
            dir.path(),
            &ck,
            &["sub-000".to_string()],
            TrainMode::Spectral,
        )
        .unwrap_err();
        match err {
            Error::MissingArtifact { path, .. } => assert_eq!(path, ck),
            other => panic!("expected MissingArtifact, got {other:?}"),
        }
    }
}
