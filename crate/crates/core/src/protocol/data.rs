//! Client-side dataset preparation: split, standardize, one-hot, batch.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{FeatureFile, LabelFile, Standardization};
use crate::linalg::PlainMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitTag {
    Train,
    Val,
    Test,
}

/// One split after preprocessing; features are already standardized,
/// clipped and scaled into `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureDataset {
    pub features: PlainMatrix,
    pub labels_onehot: PlainMatrix,
    pub split: SplitTag,
    pub stats: Standardization,
}

impl FeatureDataset {
    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn labels(&self) -> Vec<usize> {
        self.labels_onehot.argmax_rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedData {
    pub train: FeatureDataset,
    pub val: FeatureDataset,
    pub test: FeatureDataset,
}

impl PreparedData {
    pub fn dim(&self) -> usize {
        self.train.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.train.labels_onehot.cols()
    }
}

/// Seeded shuffle cut into three parts; train and validation sizes are
/// rounded, the test split takes the rest.
pub fn split_indices(n: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * ratios[0]).round() as usize;
    let n_val = (((n as f64) * ratios[1]).round() as usize).min(n.saturating_sub(n_train));
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    let parts = [idx, val, test];
    for (p, name) in parts.iter().zip(["train", "validation", "test"]) {
        if p.is_empty() {
            return Err(Error::Empty(format!("{name} split of {n} samples with ratios {ratios:?}")));
        }
    }
    Ok(parts)
}

pub fn one_hot(labels: &[u16], classes: usize) -> Result<PlainMatrix> {
    let mut m = PlainMatrix::zeros(labels.len(), classes);
    for (r, &l) in labels.iter().enumerate() {
        if l as usize >= classes {
            return Err(Error::Config(format!("label {l} at row {r} not below {classes} classes")));
        }
        m.set(r, l as usize, 1.0);
    }
    Ok(m)
}

/// Splits, fits standardization on the training rows only and applies it
/// to all three splits.
pub fn prepare(features: &FeatureFile, labels: &LabelFile, ratios: [f64; 3], seed: u64) -> Result<PreparedData> {
    let x = &features.features;
    if x.rows() != labels.labels.len() {
        return Err(Error::Shape(format!(
            "{} feature rows but {} labels",
            x.rows(),
            labels.labels.len()
        )));
    }
    let k = labels.class_count as usize;
    let [tr, va, te] = split_indices(x.rows(), ratios, seed)?;
    let raw_train = x.select_rows(&tr);
    let stats = Standardization::fit(&raw_train)?;
    let make = |idx: &[usize], split| -> Result<FeatureDataset> {
        let l: Vec<u16> = idx.iter().map(|&i| labels.labels[i]).collect();
        Ok(FeatureDataset {
            features: stats.apply(&x.select_rows(idx))?,
            labels_onehot: one_hot(&l, k)?,
            split,
            stats: stats.clone(),
        })
    };
    Ok(PreparedData {
        train: make(&tr, SplitTag::Train)?,
        val: make(&va, SplitTag::Val)?,
        test: make(&te, SplitTag::Test)?,
    })
}

/// Fixed sequential batches. Every batch has `rows` slots; the last one
/// may have fewer real rows.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchPlan {
    pub rows: usize,
    pub batches: Vec<Range<usize>>,
}

/// Batches of `batch_size` rows, capped at the training set size so a small
/// dataset is not padded out to a large nominal batch.
pub fn plan_batches(n_train: usize, batch_size: usize) -> BatchPlan {
    let rows = batch_size.min(n_train).max(1);
    let batches = (0..n_train.div_ceil(rows))
        .map(|b| b * rows..((b + 1) * rows).min(n_train))
        .collect();
    BatchPlan { rows, batches }
}

/// Features, labels and row mask of one batch, zero-padded to `rows`.
pub fn batch_slice(ds: &FeatureDataset, range: Range<usize>, rows: usize) -> (PlainMatrix, PlainMatrix, Vec<f64>) {
    let real = range.len();
    let pad = |m: &PlainMatrix| {
        PlainMatrix::from_fn(rows, m.cols(), |r, c| if r < real { m.get(range.start + r, c) } else { 0.0 })
    };
    let mask = (0..rows).map(|r| if r < real { 1.0 } else { 0.0 }).collect();
    (pad(&ds.features), pad(&ds.labels_onehot), mask)
}

/// Top-1 accuracy of `logits` against one-hot `labels`.
pub fn accuracy(logits: &PlainMatrix, labels: &PlainMatrix) -> f64 {
    let pred = logits.argmax_rows();
    let truth = labels.argmax_rows();
    let hits = pred.iter().zip(&truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len().max(1) as f64
}
