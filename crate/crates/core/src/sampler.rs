//! Balanced branch datasets for multi-branch training.
//!
//! The negatives are shuffled once and dealt round-robin into `N_b`
//! disjoint subsets; branch `i` trains on `D_i = D_-^i ∪ D_+`.

use std::io;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Label;
use crate::models::MAX_BRANCHES;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("no positive samples")]
    NoPositives,
    #[error("{negatives} negatives cannot fill {branches} branches")]
    TooFewNegatives { negatives: usize, branches: usize },
    #[error("branch count must be >= 1")]
    ZeroBranches,
    #[error("partition file {path}: {reason}")]
    Malformed { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, SamplerError>;

/// Positives shared by every branch plus disjoint negative subsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MbTrainingSet {
    pub positives: Vec<String>,
    pub negative_subsets: Vec<Vec<String>>,
}

impl MbTrainingSet {
    pub fn branches(&self) -> usize {
        self.negative_subsets.len()
    }

    /// Ids of `D_i` with their targets, positives first.
    pub fn branch_dataset(&self, i: usize) -> Vec<(String, f64)> {
        self.positives
            .iter()
            .map(|id| (id.clone(), 1.0))
            .chain(self.negative_subsets[i].iter().map(|id| (id.clone(), 0.0)))
            .collect()
    }

    /// Every `|D_-^i| / |D_+|` lies in `[1/2, 2]`.
    pub fn is_balanced(&self) -> bool {
        let pos = self.positives.len() as f64;
        self.negative_subsets
            .iter()
            .all(|s| (0.5..=2.0).contains(&(s.len() as f64 / pos)))
    }

    /// `Σ_i |D_i| = |D_-| + N_b·|D_+|`.
    pub fn samples_per_epoch(&self) -> usize {
        let neg: usize = self.negative_subsets.iter().map(Vec::len).sum();
        neg + self.branches() * self.positives.len()
    }

    /// Writes `id,label,branch` rows; positives carry the branch `all`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "label", "branch"])?;
        for id in &self.positives {
            w.write_record([id.as_str(), Label::Af.as_str(), "all"])?;
        }
        for (i, subset) in self.negative_subsets.iter().enumerate() {
            for id in subset {
                w.write_record([id.as_str(), Label::Normal.as_str(), &i.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let bad = |reason: String| SamplerError::Malformed {
            path: path.display().to_string(),
            reason,
        };
        let mut r = csv::Reader::from_path(path)?;
        let mut positives = Vec::new();
        let mut subsets: Vec<Vec<String>> = Vec::new();
        for (line, row) in r.records().enumerate() {
            let row = row?;
            let [id, _label, branch] = [0, 1, 2].map(|k| row.get(k).unwrap_or("").trim().to_string());
            if id.is_empty() {
                return Err(bad(format!("row {}: empty id", line + 2)));
            }
            if branch == "all" {
                positives.push(id);
                continue;
            }
            let i: usize = branch
                .parse()
                .map_err(|_| bad(format!("row {}: branch '{branch}'", line + 2)))?;
            if subsets.len() <= i {
                subsets.resize(i + 1, Vec::new());
            }
            subsets[i].push(id);
        }
        if subsets.iter().any(Vec::is_empty) {
            return Err(bad("empty branch subset".into()));
        }
        Ok(Self {
            positives,
            negative_subsets: subsets,
        })
    }
}

/// `max(1, round(n_neg / n_pos))`, capped at 16. The resulting partition
/// is balanced for `1/2 <= n_neg / n_pos <= 32`.
pub fn default_branch_count(n_neg: usize, n_pos: usize) -> usize {
    assert!(n_pos >= 1, "default_branch_count needs a positive sample");
    ((n_neg as f64 / n_pos as f64).round() as usize).clamp(1, MAX_BRANCHES)
}

/// Splits labelled ids into `N_b` balanced branch datasets. Unlabelled ids
/// are ignored.
pub fn partition(samples: &[(String, Label)], branches: usize, seed: u64) -> Result<MbTrainingSet> {
    if branches == 0 {
        return Err(SamplerError::ZeroBranches);
    }
    let positives: Vec<String> = samples
        .iter()
        .filter(|(_, l)| *l == Label::Af)
        .map(|(id, _)| id.clone())
        .collect();
    let mut negatives: Vec<String> = samples
        .iter()
        .filter(|(_, l)| *l == Label::Normal)
        .map(|(id, _)| id.clone())
        .collect();
    if positives.is_empty() {
        return Err(SamplerError::NoPositives);
    }
    if negatives.len() < branches {
        return Err(SamplerError::TooFewNegatives {
            negatives: negatives.len(),
            branches,
        });
    }
    negatives.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut subsets = vec![Vec::new(); branches];
    for (k, id) in negatives.into_iter().enumerate() {
        subsets[k % branches].push(id);
    }
    Ok(MbTrainingSet {
        positives,
        negative_subsets: subsets,
    })
}

/// One mini-batch drawn from a single branch dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchBatch {
    pub branch: usize,
    pub ids: Vec<String>,
    pub targets: Vec<f64>,
}

/// Batches for one epoch: each branch dataset is shuffled and chunked, and
/// the branches are visited in turn (batch 0 of every branch, then batch 1,
/// and so on).
pub fn branch_batches(set: &MbTrainingSet, batch_size: usize, epoch_seed: u64) -> Vec<BranchBatch> {
    assert!(batch_size >= 1, "batch size must be >= 1");
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let per_branch: Vec<Vec<BranchBatch>> = (0..set.branches())
        .map(|i| {
            let mut data = set.branch_dataset(i);
            data.shuffle(&mut rng);
            data.chunks(batch_size)
                .map(|chunk| BranchBatch {
                    branch: i,
                    ids: chunk.iter().map(|(id, _)| id.clone()).collect(),
                    targets: chunk.iter().map(|(_, y)| *y).collect(),
                })
                .collect()
        })
        .collect();
    let rounds = per_branch.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for batches in &per_branch {
            if let Some(b) = batches.get(r) {
                out.push(b.clone());
            }
        }
    }
    out
}
