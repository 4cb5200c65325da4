//! Deterministic train/validation/test splitting of subject ids.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// A 70/10/20 partition of subject ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Splits subjects 70/10/20. Train and validation counts use round-half-up,
/// test takes the remainder. Deterministic in (subjects, seed).
pub fn split_dataset(subjects: &[String], seed: u64) -> Result<DatasetSplit> {
    let n = subjects.len();
    if n < 5 {
        return Err(Error::TooFewSubjects { min: 5, got: n });
    }
    let n_train = round_half_up(0.7 * n as f64);
    let n_val = round_half_up(0.1 * n as f64);

    let mut shuffled: Vec<String> = subjects.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);

    let train = shuffled[..n_train].to_vec();
    let val = shuffled[n_train..n_train + n_val].to_vec();
    let test = shuffled[n_train + n_val..].to_vec();
    Ok(DatasetSplit {
        train,
        val,
        test,
        seed,
    })
}

impl DatasetSplit {
    pub fn all_subjects(&self) -> Vec<String> {
        let mut all = self.train.clone();
        all.extend_from_slice(&self.val);
        all.extend_from_slice(&self.test);
        all
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for (section, ids) in [
            ("[train]", &self.train),
            ("[val]", &self.val),
            ("[test]", &self.test),
        ] {
            let _ = writeln!(text, "{section}");
            for id in ids {
                let _ = writeln!(text, "{id}");
            }
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut split = DatasetSplit {
            train: Vec::new(),
            val: Vec::new(),
            test: Vec::new(),
            seed: 0,
        };
        let mut section: Option<usize> = None;
        for (idx, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() {
                continue;
            }
            match t {
                "[train]" => section = Some(0),
                "[val]" => section = Some(1),
                "[test]" => section = Some(2),
                id => match section {
                    Some(0) => split.train.push(id.to_string()),
                    Some(1) => split.val.push(id.to_string()),
                    Some(2) => split.test.push(id.to_string()),
                    _ => {
                        return Err(Error::parse(
                            path,
                            idx + 1,
                            format!("subject id {id:?} before any section header"),
                        ))
                    }
                },
            }
        }
        Ok(split)
    }
}
