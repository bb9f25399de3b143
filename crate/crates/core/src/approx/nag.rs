//! Nesterov-accelerated gradient steps, encrypted and in the clear.

use serde::{Deserialize, Serialize};

use super::config::SoftmaxConfig;
use super::enc::{asoftmax, ensure_all};
use super::plain::SoftmaxKind;
use crate::ckks::Evaluator;
use crate::error::{Error, Result};
use crate::linalg::{
    mask_entries, mat_sub, matmul_abt, matmul_atb, EncMatrix, PlainMatrix, RefreshPurpose, Refresher,
};

/// State of the sequence `λ_0 = 0`, `λ_{t+1} = (1 + sqrt(1 + 4λ_t²)) / 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NagSchedule {
    pub t: u64,
    pub lambda: f64,
}

impl Default for NagSchedule {
    fn default() -> Self {
        Self { t: 0, lambda: 0.0 }
    }
}

fn next_lambda(l: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * l * l).sqrt()) / 2.0
}

impl NagSchedule {
    /// `γ_t = (1 - λ_t) / λ_{t+1}` for the current `t`.
    pub fn gamma(&self) -> f64 {
        (1.0 - self.lambda) / next_lambda(self.lambda)
    }

    /// Returns `γ_t` and moves to `t + 1`.
    pub fn advance(&mut self) -> f64 {
        let g = self.gamma();
        self.lambda = next_lambda(self.lambda);
        self.t += 1;
        g
    }

    /// Schedule positioned at step `t`.
    pub fn at(t: u64) -> Self {
        let mut s = Self::default();
        for _ in 0..t {
            s.advance();
        }
        s
    }
}

pub fn nag_lambda(t: u64) -> f64 {
    NagSchedule::at(t).lambda
}

pub fn nag_gamma(t: u64) -> f64 {
    NagSchedule::at(t).gamma()
}

/// One mini-batch. Padding rows carry weight 0 in `row_mask`.
pub struct Batch<'a, M> {
    pub x: &'a M,
    pub y: &'a M,
    pub row_mask: &'a [f64],
}

impl<M> Batch<'_, M> {
    /// Number of real rows, the `N` of the update.
    pub fn size(&self) -> f64 {
        self.row_mask.iter().sum()
    }
}

/// Weights `W` and look-ahead point `V`.
#[derive(Clone, Debug)]
pub struct NagState<M> {
    pub w: M,
    pub v: M,
}

fn check_batch<M>(b: &Batch<'_, M>, rows: usize) -> Result<f64> {
    if b.row_mask.len() != rows {
        return Err(Error::Shape(format!("row mask of {} for {rows} rows", b.row_mask.len())));
    }
    let n = b.size();
    if n <= 0.0 {
        return Err(Error::Empty("batch has no real rows".into()));
    }
    Ok(n)
}

/// `W' = V - (α/N)(P - Y)ᵀX` with `P = ASoftmax(X Vᵀ)`, then
/// `V' = (1 - γ_t)W' + γ_t W`.
pub fn nag_step(
    ev: &Evaluator,
    state: NagState<EncMatrix>,
    batch: &Batch<'_, EncMatrix>,
    gamma: f64,
    alpha: f64,
    cfg: &SoftmaxConfig,
    refresher: &mut dyn Refresher,
) -> Result<NagState<EncMatrix>> {
    let n = check_batch(batch, batch.x.rows())?;
    if batch.y.rows() != batch.x.rows() || batch.y.cols() != state.w.rows() {
        return Err(Error::Shape(format!(
            "labels {}x{} for {} rows and {} classes",
            batch.y.rows(),
            batch.y.cols(),
            batch.x.rows(),
            state.w.rows()
        )));
    }
    let NagState { w, v } = state;
    let logits = matmul_abt(ev, batch.x, &v, refresher)?;
    let p = asoftmax(ev, &logits, cfg, refresher)?;
    let [p, y]: [EncMatrix; 2] = ensure_all(vec![p, batch.y.clone()], 1, refresher, RefreshPurpose::Gradient)?
        .try_into()
        .unwrap();
    let diff = mat_sub(ev, &p, &y)?;
    let step = alpha / n;
    let scaled = mask_entries(ev, &diff, |r, _| batch.row_mask[r] * step)?;
    let grad = matmul_atb(ev, &scaled, batch.x, refresher)?;
    let w_next = mat_sub(ev, &v, &grad)?;
    if gamma == 0.0 {
        return Ok(NagState { w: w_next.clone(), v: w_next });
    }
    let [w_next, w]: [EncMatrix; 2] = ensure_all(vec![w_next, w], 1, refresher, RefreshPurpose::Weights)?
        .try_into()
        .unwrap();
    let delta = mat_sub(ev, &w, &w_next)?;
    let tiles = w_next
        .tiles
        .iter()
        .zip(&delta.tiles)
        .map(|(a, d)| ev.add(a, &ev.mult_const(d, gamma)?))
        .collect::<Result<_>>()?;
    let v_next = EncMatrix::new(w_next.layout, tiles)?;
    Ok(NagState { w: w_next, v: v_next })
}

/// `(1/N)(P - Y)ᵀX` over the real rows, `P = softmax(X Wᵀ)`.
pub fn gradient(w: &PlainMatrix, batch: &Batch<'_, PlainMatrix>, softmax: &SoftmaxKind) -> Result<PlainMatrix> {
    let n = check_batch(batch, batch.x.rows())?;
    let p = softmax.apply(&batch.x.matmul_abt(w)?);
    let mut diff = p.sub(batch.y)?;
    for r in 0..diff.rows() {
        let m = batch.row_mask[r] / n;
        diff.row_mut(r).iter_mut().for_each(|v| *v *= m);
    }
    diff.matmul_atb(batch.x)
}

/// Cleartext mirror of [`nag_step`].
pub fn plain_nag_step(
    state: &NagState<PlainMatrix>,
    batch: &Batch<'_, PlainMatrix>,
    gamma: f64,
    alpha: f64,
    softmax: &SoftmaxKind,
) -> Result<NagState<PlainMatrix>> {
    let g = gradient(&state.v, batch, softmax)?;
    let w = state.v.sub(&g.scale(alpha))?;
    let v = w.add(&state.w.sub(&w)?.scale(gamma))?;
    Ok(NagState { w, v })
}
