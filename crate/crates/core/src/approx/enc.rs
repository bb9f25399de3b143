//! Encrypted exponential, reciprocal and softmax on packed matrices.
//!
//! Every operation keeps the slots outside the matrix at zero and asks the
//! refresher for fresh ciphertexts whenever the next multiplication has no
//! level left.

use super::config::SoftmaxConfig;
use crate::ckks::Evaluator;
use crate::error::{Error, Result};
use crate::linalg::{mask_entries, segment_replicate, segment_sum, EncMatrix, RefreshPurpose, Refresher};

/// Refreshes every matrix in one round trip if any of them is below `need`.
pub(crate) fn ensure_all(
    ms: Vec<EncMatrix>,
    need: usize,
    refresher: &mut dyn Refresher,
    purpose: RefreshPurpose,
) -> Result<Vec<EncMatrix>> {
    if ms.iter().all(|m| m.level() >= need) {
        return Ok(ms);
    }
    let n = ms.len();
    let fresh = refresher.refresh_many(ms, purpose)?;
    if fresh.len() != n {
        return Err(Error::Protocol(format!("refresh returned {} matrices for {n}", fresh.len())));
    }
    if let Some(m) = fresh.iter().find(|m| m.level() < need) {
        return Err(Error::DepthExhausted {
            op: "refresh",
            need,
            have: m.level(),
        });
    }
    Ok(fresh)
}

fn ready(m: EncMatrix, refresher: &mut dyn Refresher) -> Result<EncMatrix> {
    Ok(ensure_all(vec![m], 1, refresher, RefreshPurpose::Softmax)?.pop().unwrap())
}

fn map_tiles(
    m: &EncMatrix,
    f: impl Fn(usize, &crate::ckks::Ciphertext) -> Result<crate::ckks::Ciphertext>,
) -> Result<EncMatrix> {
    let tiles = m.tiles.iter().enumerate().map(|(t, c)| f(t, c)).collect::<Result<_>>()?;
    EncMatrix::new(m.layout, tiles)
}

fn zip_tiles(
    a: &EncMatrix,
    b: &EncMatrix,
    f: impl Fn(&crate::ckks::Ciphertext, &crate::ckks::Ciphertext) -> Result<crate::ckks::Ciphertext>,
) -> Result<EncMatrix> {
    if a.layout != b.layout {
        return Err(Error::Shape("operands have different layouts".into()));
    }
    let tiles = a.tiles.iter().zip(&b.tiles).map(|(x, y)| f(x, y)).collect::<Result<_>>()?;
    EncMatrix::new(a.layout, tiles)
}

/// `value` on every entry of the matrix, zero elsewhere.
fn support(m: &EncMatrix, tile: usize, value: f64) -> Vec<f64> {
    m.layout.tile_vector(tile, |_, _| value)
}

/// Entrywise `(1 + x/2^r)^(2^r)`. Consumes `r + 1` levels between refreshes.
pub fn aexp(ev: &Evaluator, m: &EncMatrix, r: u32, refresher: &mut dyn Refresher) -> Result<EncMatrix> {
    let m = ready(m.clone(), refresher)?;
    let inv = 2f64.powi(-(r as i32));
    let mut y = map_tiles(&m, |t, c| {
        let lin = ev.mult_plain(c, &support(&m, t, inv))?;
        ev.add_plain(&lin, &support(&m, t, 1.0))
    })?;
    for _ in 0..r {
        y = ready(y, refresher)?;
        y = map_tiles(&y, |_, c| ev.square(c))?;
    }
    Ok(y)
}

/// Entrywise reciprocal for entries in `cfg.inv_range`: Goldschmidt
/// iterations followed by one Newton step. Consumes `inv_iterations + 3`
/// levels between refreshes.
pub fn ainv(ev: &Evaluator, m: &EncMatrix, cfg: &SoftmaxConfig, refresher: &mut dyn Refresher) -> Result<EncMatrix> {
    let m = ready(m.clone(), refresher)?;
    let y0 = cfg.inv_seed();
    // e0 = 1 - y0·x and y1 = y0·(1 + e0) = 2·y0 - y0²·x, both one level down
    let mut e = map_tiles(&m, |t, c| ev.add_plain(&ev.mult_const(c, -y0)?, &support(&m, t, 1.0)))?;
    let mut y = map_tiles(&m, |t, c| {
        ev.add_plain(&ev.mult_const(c, -y0 * y0)?, &support(&m, t, 2.0 * y0))
    })?;
    for _ in 1..cfg.inv_iterations {
        let [ee, yy]: [EncMatrix; 2] = ensure_all(vec![e, y], 1, refresher, RefreshPurpose::Softmax)?
            .try_into()
            .unwrap();
        let sq = map_tiles(&ee, |_, c| ev.square(c))?;
        let [ee, yy]: [EncMatrix; 2] = ensure_all(vec![sq, yy], 1, refresher, RefreshPurpose::Softmax)?
            .try_into()
            .unwrap();
        y = zip_tiles(&yy, &ee, |yc, ec| ev.mult(yc, &ev.add_const(ec, 1.0)))?;
        e = ee;
    }
    // near lb the rounding noise on e0 is large relative to 1 - e0; a Newton
    // step against x itself squares that error away
    let [x, yy]: [EncMatrix; 2] = ensure_all(vec![m, y], 1, refresher, RefreshPurpose::Softmax)?
        .try_into()
        .unwrap();
    let xy = zip_tiles(&x, &yy, |a, b| ev.mult(a, b))?;
    let [xy, yy]: [EncMatrix; 2] = ensure_all(vec![xy, yy], 1, refresher, RefreshPurpose::Softmax)?
        .try_into()
        .unwrap();
    zip_tiles(&yy, &xy, |yc, p| ev.mult(yc, &ev.add_const(&ev.negate(p), 2.0)))
}

/// Row-wise approximate softmax of an `N×k` logit matrix.
pub fn asoftmax(
    ev: &Evaluator,
    logits: &EncMatrix,
    cfg: &SoftmaxConfig,
    refresher: &mut dyn Refresher,
) -> Result<EncMatrix> {
    if logits.cols() != cfg.class_count {
        return Err(Error::Shape(format!(
            "{} logit columns for {} classes",
            logits.cols(),
            cfg.class_count
        )));
    }
    let stride = logits.layout.stride;
    let e = aexp(ev, logits, cfg.exp_squarings, refresher)?;
    let e = ready(e, refresher)?;
    let sums = map_tiles(&e, |_, c| segment_sum(ev, c, stride))?;
    let heads = mask_entries(ev, &sums, |_, c| if c == 0 { 1.0 } else { 0.0 })?;
    let denom = map_tiles(&heads, |_, c| segment_replicate(ev, c, stride))?;
    let inv = ainv(ev, &denom, cfg, refresher)?;
    let [e, inv]: [EncMatrix; 2] = ensure_all(vec![e, inv], 1, refresher, RefreshPurpose::Softmax)?
        .try_into()
        .unwrap();
    zip_tiles(&e, &inv, |a, b| ev.mult(a, b))
}
