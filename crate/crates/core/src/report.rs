//! Experiment reports: per-parcel CSV plus a JSON summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ParcelMetrics;

/// All per-parcel metrics of one mode (or mode variant such as
/// `spectral_mrf`) over the evaluated subjects.
#[derive(Debug, Clone)]
pub struct ModeRun {
    pub mode: String,
    /// (subject, metrics) in evaluation order.
    pub subjects: Vec<(String, ParcelMetrics)>,
}

/// Pooled statistics over all (subject, parcel) pairs of a mode.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModeSummary {
    pub dice_mean: f64,
    pub dice_std: f64,
    pub dice_min: f64,
    pub dice_max: f64,
    pub hausdorff_mean_mm: f64,
    pub node_accuracy: f64,
    pub subjects: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub modes: BTreeMap<String, ModeSummary>,
    /// Chosen MRF smoothness per base mode.
    pub lambda: BTreeMap<String, f64>,
}

pub fn summarize(run: &ModeRun) -> ModeSummary {
    let mut dices = Vec::new();
    let mut hausdorffs = Vec::new();
    let mut acc_sum = 0.0;
    for (_, m) in &run.subjects {
        for &(_, dice, hd, _) in &m.per_parcel {
            dices.push(dice);
            hausdorffs.push(hd);
        }
        acc_sum += m.node_accuracy;
    }
    let n = dices.len().max(1) as f64;
    let mean = dices.iter().sum::<f64>() / n;
    let var = dices.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    ModeSummary {
        dice_mean: mean,
        dice_std: var.sqrt(),
        dice_min: dices.iter().cloned().fold(f64::INFINITY, f64::min),
        dice_max: dices.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        hausdorff_mean_mm: hausdorffs.iter().sum::<f64>() / n,
        node_accuracy: acc_sum / run.subjects.len().max(1) as f64,
        subjects: run.subjects.len(),
    }
}

/// Writes `metrics_per_parcel.csv` and `summary.json`. Output bytes are a
/// pure function of the inputs.
pub fn emit_report(
    runs: &[ModeRun],
    lambdas: &BTreeMap<String, f64>,
    report_dir: &Path,
) -> Result<Summary> {
    if runs.is_empty() {
        return Err(Error::InvalidArg("no runs to report".into()));
    }
    fs::create_dir_all(report_dir).map_err(|e| Error::io(report_dir, e))?;

    let mut csv = String::from("mode,subject,parcel,dice,hausdorff_mm\n");
    for run in runs {
        for (subject, metrics) in &run.subjects {
            for &(parcel, dice, hd, _) in &metrics.per_parcel {
                let _ = writeln!(csv, "{},{},{},{},{}", run.mode, subject, parcel, dice, hd);
            }
        }
    }
    let csv_path = report_dir.join("metrics_per_parcel.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;

    let mut modes = BTreeMap::new();
    for run in runs {
        modes.insert(run.mode.clone(), summarize(run));
    }
    let summary = Summary {
        modes,
        lambda: lambdas.clone(),
    };
    let mut bytes = serde_json::to_vec_pretty(&summary).expect("serializable");
    bytes.push(b'\n');
    let json_path = report_dir.join("summary.json");
    fs::write(&json_path, bytes).map_err(|e| Error::io(&json_path, e))?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fake_metrics(dices: &[f64]) -> ParcelMetrics {
        let n = dices.len() as f64;
        let mean = dices.iter().sum::<f64>() / n;
        let var = dices.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
        ParcelMetrics {
            per_parcel: dices
                .iter()
                .enumerate()
                .map(|(c, &d)| (c, d, 1.0 + c as f64, 10))
                .collect(),
            dice_mean: mean,
            dice_std: var.sqrt(),
            dice_min: dices.iter().cloned().fold(f64::INFINITY, f64::min),
            dice_max: dices.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            hausdorff_mean: 0.0,
            node_accuracy: 0.9,
        }
    }

    #[test]
    fn two_modes_two_columns_and_exact_mean() {
        let runs = vec![
            ModeRun {
                mode: "euclidean".into(),
                subjects: vec![("sub-000".into(), fake_metrics(&[0.25, 0.5, 0.75]))],
            },
            ModeRun {
                mode: "spectral".into(),
                subjects: vec![("sub-000".into(), fake_metrics(&[0.5, 1.0, 0.5]))],
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let summary = emit_report(&runs, &BTreeMap::new(), dir.path()).unwrap();
        assert_eq!(summary.modes.len(), 2);
        let s = &summary.modes["spectral"];
        assert!((s.dice_mean - (0.5 + 1.0 + 0.5) / 3.0).abs() < 1e-12);
        let csv = fs::read_to_string(dir.path().join("metrics_per_parcel.csv")).unwrap();
        assert!(csv.lines().any(|l| l.starts_with("euclidean,sub-000,0,")));
        assert!(csv.lines().any(|l| l.starts_with("spectral,sub-000,2,")));
    }

    #[test]
    fn deterministic_bytes() {
        let runs = vec![ModeRun {
            mode: "spectral".into(),
            subjects: vec![("sub-001".into(), fake_metrics(&[0.1, 0.9]))],
        }];
        let mut lambdas = BTreeMap::new();
        lambdas.insert("spectral".to_string(), 0.5);
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        emit_report(&runs, &lambdas, d1.path()).unwrap();
        emit_report(&runs, &lambdas, d2.path()).unwrap();
        for name in ["metrics_per_parcel.csv", "summary.json"] {
            assert_eq!(
                fs::read(d1.path().join(name)).unwrap(),
                fs::read(d2.path().join(name)).unwrap()
            );
        }
    }
}
