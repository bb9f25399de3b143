//! Cleartext counterparts of the encrypted approximations, evaluated with
//! the same polynomials in the same order.

use serde::{Deserialize, Serialize};

use super::config::SoftmaxConfig;
use crate::error::{Error, Result};
use crate::linalg::PlainMatrix;

/// `(1 + x/2^r)^(2^r)` by `r` squarings.
pub fn aexp_plain(x: f64, r: u32) -> f64 {
    let mut y = 1.0 + x / 2f64.powi(r as i32);
    for _ in 0..r {
        y *= y;
    }
    y
}

/// Goldschmidt reciprocal with the configured seed and iteration count,
/// finished by one Newton step.
pub fn ainv_plain(x: f64, cfg: &SoftmaxConfig) -> f64 {
    let mut y = cfg.inv_seed();
    let mut e = 1.0 - y * x;
    for i in 0..cfg.inv_iterations {
        if i > 0 {
            e *= e;
        }
        y *= 1.0 + e;
    }
    y * (2.0 - x * y)
}

/// Row-wise approximate softmax as evaluated under encryption.
pub fn asoftmax_plain(logits: &PlainMatrix, cfg: &SoftmaxConfig) -> PlainMatrix {
    let mut out = logits.map(|x| aexp_plain(x, cfg.exp_squarings));
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let inv = ainv_plain(row.iter().sum(), cfg);
        row.iter_mut().for_each(|v| *v *= inv);
    }
    out
}

/// Exact row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &PlainMatrix) -> PlainMatrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.iter_mut().for_each(|v| *v = (*v - m).exp());
        let s: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Which softmax a cleartext trainer evaluates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SoftmaxKind {
    Exact,
    Approx(SoftmaxConfig),
}

impl SoftmaxKind {
    pub fn apply(&self, logits: &PlainMatrix) -> PlainMatrix {
        match self {
            SoftmaxKind::Exact => softmax_rows(logits),
            SoftmaxKind::Approx(cfg) => asoftmax_plain(logits, cfg),
        }
    }
}

/// Mean of `-log softmax(logits_i)[y_i]` over the rows of one-hot `labels`.
pub fn cross_entropy(logits: &PlainMatrix, labels: &PlainMatrix) -> Result<f64> {
    if logits.rows() != labels.rows() || logits.cols() != labels.cols() {
        return Err(Error::Shape(format!(
            "logits {}x{} vs labels {}x{}",
            logits.rows(),
            logits.cols(),
            labels.rows(),
            labels.cols()
        )));
    }
    let mut total = 0.0;
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += row.iter().zip(labels.row(r)).map(|(z, y)| y * (lse - z)).sum::<f64>();
    }
    Ok(total / logits.rows() as f64)
}
