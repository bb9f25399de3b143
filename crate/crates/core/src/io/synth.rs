//! Gaussian class blobs for desk-scale runs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use super::formats::{Dtype, FeatureFile, LabelFile};
use crate::error::{Error, Result};
use crate::linalg::PlainMatrix;

/// Per-coordinate standard deviation of each blob.
pub const BLOB_SIGMA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub n: usize,
    pub seed: u64,
    /// Distance between every pair of class means.
    pub separation: f64,
}

/// Class `j` is centred on `separation/√2 · e_{π(j)}` for a seeded
/// coordinate permutation `π`, so all means are pairwise `separation` apart.
/// Labels cycle through the classes in a seeded order, so class counts
/// differ by at most one.
pub fn synth_data(spec: &SynthSpec) -> Result<(FeatureFile, LabelFile)> {
    let SynthSpec { classes: k, dim: d, n, seed, separation } = *spec;
    if k < 2 || d < 2 {
        return Err(Error::Config(format!("need at least 2 classes and 2 dimensions, got k={k}, d={d}")));
    }
    if k > d {
        return Err(Error::Config(format!("{k} equidistant class means need at least {k} dimensions")));
    }
    if n == 0 {
        return Err(Error::Empty("zero samples requested".into()));
    }
    if k > u16::MAX as usize {
        return Err(Error::Config(format!("{k} classes exceed the label format")));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Config(format!("separation {separation} must be finite and non-negative")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut axes: Vec<usize> = (0..d).collect();
    axes.shuffle(&mut rng);
    let mut labels: Vec<u16> = (0..n).map(|i| (i % k) as u16).collect();
    labels.shuffle(&mut rng);
    let noise = Normal::new(0.0, BLOB_SIGMA).expect("valid sigma");
    let offset = separation / std::f64::consts::SQRT_2;
    let mut x = PlainMatrix::zeros(n, d);
    for (r, &l) in labels.iter().enumerate() {
        let row = x.row_mut(r);
        for v in row.iter_mut() {
            *v = noise.sample(&mut rng);
        }
        row[axes[l as usize]] += offset;
    }
    Ok((
        FeatureFile { features: x, dtype: Dtype::F64, stats: None },
        LabelFile { labels, class_count: k as u32 },
    ))
}
