//! Rotation-and-mask kernels on packed matrices.

use super::enc::{ensure_levels, EncMatrix, RefreshPurpose, Refresher};
use super::layout::TileLayout;
use crate::ckks::eval::rotation_terms;
use crate::ckks::{Ciphertext, Evaluator};
use crate::error::{Error, Result};

/// Levels consumed by [`matmul_abt`] and [`matmul_atb`].
pub const MATMUL_DEPTH: usize = 3;

/// Left rotate-and-sum over `width` consecutive slots (`width` a power of
/// two): slot `x` ends up holding `Σ_{i<width} v[x+i]`.
pub fn segment_sum(ev: &Evaluator, ct: &Ciphertext, width: usize) -> Result<Ciphertext> {
    let mut acc = ct.clone();
    let mut step = 1;
    while step < width {
        acc = ev.add(&acc, &ev.rotate(&acc, step as i64)?)?;
        step *= 2;
    }
    Ok(acc)
}

/// Right rotate-and-sum: slot `x` ends up holding `Σ_{i<width} v[x-i]`.
/// With only segment heads nonzero this copies each head across its segment.
pub fn segment_replicate(ev: &Evaluator, ct: &Ciphertext, width: usize) -> Result<Ciphertext> {
    let mut acc = ct.clone();
    let mut step = 1;
    while step < width {
        acc = ev.add(&acc, &ev.rotate(&acc, -(step as i64))?)?;
        step *= 2;
    }
    Ok(acc)
}

/// Sums all `slots / stride` segments into every segment.
pub fn sum_segments(ev: &Evaluator, ct: &Ciphertext, stride: usize) -> Result<Ciphertext> {
    let slots = ev.context().slots();
    let mut acc = ct.clone();
    let mut step = stride;
    while step < slots {
        acc = ev.add(&acc, &ev.rotate(&acc, step as i64)?)?;
        step *= 2;
    }
    Ok(acc)
}

/// Slot mask selecting `(local_row, col)` pairs accepted by `keep` within a tile,
/// each scaled by `value`.
fn mask(layout: &TileLayout, tile: usize, value: f64, keep: impl Fn(usize, usize) -> bool) -> Vec<f64> {
    layout.tile_vector(tile, |r, c| if keep(r, c) { value } else { 0.0 })
}

/// Multiplies every tile by the layout's own support, scaled by `value`;
/// clears garbage slots. Consumes one level.
pub fn mask_matrix(ev: &Evaluator, m: &EncMatrix, value: f64) -> Result<EncMatrix> {
    mask_entries(ev, m, |_, _| value)
}

/// Multiplies entry `(r, c)` by `f(r, c)` (global row index) and zeroes every
/// slot outside the layout. Consumes one level.
pub fn mask_entries(ev: &Evaluator, m: &EncMatrix, f: impl Fn(usize, usize) -> f64) -> Result<EncMatrix> {
    let tiles = m
        .tiles
        .iter()
        .enumerate()
        .map(|(t, ct)| {
            let start = m.layout.tile_rows(t).start;
            ev.mult_plain(ct, &m.layout.tile_vector(t, |r, c| f(start + r, c)))
        })
        .collect::<Result<_>>()?;
    EncMatrix::new(m.layout, tiles)
}

fn same_packing(a: &TileLayout, b: &TileLayout) -> Result<()> {
    if a.stride != b.stride || a.slots != b.slots {
        return Err(Error::Layout(format!(
            "operands packed with stride {}/{} slots vs {}/{}",
            a.stride, a.slots, b.stride, b.slots
        )));
    }
    Ok(())
}

pub fn mat_add(ev: &Evaluator, a: &EncMatrix, b: &EncMatrix) -> Result<EncMatrix> {
    combine(a, b, |x, y| ev.add(x, y))
}

pub fn mat_sub(ev: &Evaluator, a: &EncMatrix, b: &EncMatrix) -> Result<EncMatrix> {
    combine(a, b, |x, y| ev.sub(x, y))
}

fn combine(
    a: &EncMatrix,
    b: &EncMatrix,
    f: impl Fn(&Ciphertext, &Ciphertext) -> Result<Ciphertext>,
) -> Result<EncMatrix> {
    if a.layout != b.layout {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let tiles = a.tiles.iter().zip(&b.tiles).map(|(x, y)| f(x, y)).collect::<Result<_>>()?;
    EncMatrix::new(a.layout, tiles)
}

/// Multiplies every entry by `c`. Consumes one level.
pub fn mat_scale(ev: &Evaluator, a: &EncMatrix, c: f64) -> Result<EncMatrix> {
    let tiles = a.tiles.iter().map(|t| ev.mult_const(t, c)).collect::<Result<_>>()?;
    EncMatrix::new(a.layout, tiles)
}

/// Rough cost model in units of one length-`N` NTT on one prime.
mod cost {
    pub fn decompose(l: usize) -> usize {
        (l + 1) * (l + 2)
    }
    pub fn mod_down(l: usize) -> usize {
        2 * (l + 2)
    }
    pub fn rotate(l: usize) -> usize {
        decompose(l) + mod_down(l)
    }
    pub fn rescale(l: usize) -> usize {
        2 * l
    }
    pub fn encode(l: usize) -> usize {
        l + 3
    }
    /// One rotation inside [`Evaluator::rotate_mask_sums`]: key products only.
    pub fn lazy_rotation(l: usize) -> usize {
        (l + 1) * (l + 2) / 3 + 1
    }
    /// Cost of `outputs` masked sums over `rotations` shared rotations of a
    /// level-`l` ciphertext with `masks` distinct masks and `terms` products.
    pub fn masked_sums(l: usize, rotations: usize, masks: usize, outputs: usize, terms: usize) -> usize {
        decompose(l) + rotations * lazy_rotation(l) + masks * encode(l + 1)
            + outputs * (mod_down(l) + rescale(l)) + terms * (l + 2) / 8
    }
}

/// Cost of rotating a level-`l` ciphertext by each of `steps`, sharing one
/// decomposition among steps with dedicated keys. `None` if a step is not
/// available at all.
fn hoisted_cost(ev: &Evaluator, l: usize, steps: impl IntoIterator<Item = i64>) -> Option<usize> {
    let slots = ev.context().slots();
    let mut total = cost::decompose(l);
    for s in steps {
        if s.rem_euclid(slots as i64) == 0 {
            continue;
        }
        if ev.has_rotation_key(s) {
            total += cost::mod_down(l);
        } else if ev.can_rotate(s) {
            total += rotation_terms(s, slots).len() * cost::rotate(l);
        } else {
            return None;
        }
    }
    Some(total)
}

fn accumulate(ev: &Evaluator, acc: Option<Ciphertext>, x: Ciphertext) -> Result<Option<Ciphertext>> {
    Ok(Some(match acc {
        None => x,
        Some(s) => ev.add(&s, &x)?,
    }))
}

/// Copies of rows `0..k` of a single-tile `b`, each replicated into segments
/// `0..rows`: `out[j]` holds `B[j, :]` in every one of those segments.
/// Consumes one level.
fn replicate_rows(ev: &Evaluator, b: &Ciphertext, lay: &TileLayout, k: usize, rows: usize) -> Result<Vec<Ciphertext>> {
    let l = b.level;
    let s = lay.stride as i64;
    let g = lay.rows_per_tile();
    let doubling = k * (cost::encode(l) + cost::rescale(l) + g.trailing_zeros() as usize * cost::rotate(l - 1));
    let steps: Vec<i64> = (1 - rows as i64..k as i64).map(|u| u * s).collect();
    let hoisted = cost::masked_sums(l, steps.len(), rows, k, k * rows);
    if steps.iter().all(|&st| ev.has_rotation_key(st)) && hoisted < doubling {
        // rot(B, u·s) holds row r+u in segment r; row j reaches segment r at u = j - r
        let seg = lay.with_shape(rows, lay.cols)?;
        let masks: Vec<Vec<f64>> = (0..rows).map(|r| mask(&seg, 0, 1.0, |rr, _| rr == r)).collect();
        let outputs: Vec<Vec<(usize, usize)>> =
            (0..k).map(|j| (0..rows).map(|r| (j + rows - 1 - r, r)).collect()).collect();
        ev.rotate_mask_sums(b, &steps, &masks, &outputs)
    } else {
        (0..k)
            .map(|j| {
                let row = ev.mult_plain(b, &mask(lay, 0, 1.0, |r, _| r == j))?;
                sum_segments(ev, &row, lay.stride)
            })
            .collect()
    }
}

/// `out[j]` holds `D[r, j]` in every slot `(r, c)` with `c < width`, for the
/// rows of tile `t`. Consumes one level.
fn replicate_columns(
    ev: &Evaluator,
    dt: &Ciphertext,
    lay: &TileLayout,
    t: usize,
    k: usize,
    width: usize,
) -> Result<Vec<Ciphertext>> {
    let l = dt.level;
    let direct: Vec<i64> = (0..k as i64).collect();
    let doubling = hoisted_cost(ev, l, direct.iter().copied()).unwrap_or(usize::MAX / 4)
        + k * (cost::encode(l) + cost::rescale(l) + lay.stride.trailing_zeros() as usize * cost::rotate(l - 1));
    let steps: Vec<i64> = (1 - width as i64..k as i64).collect();
    let hoisted = cost::masked_sums(l, steps.len(), width, k, k * width);
    if steps.iter().all(|&st| ev.has_rotation_key(st)) && hoisted < doubling {
        // rot(D, j - c) holds D[r, j] at slot (r, c)
        let wide = lay.with_shape(lay.rows, width)?;
        let masks: Vec<Vec<f64>> = (0..width).map(|c| mask(&wide, t, 1.0, |_, cc| cc == c)).collect();
        let outputs: Vec<Vec<(usize, usize)>> =
            (0..k).map(|j| (0..width).map(|c| (j + width - 1 - c, c)).collect()).collect();
        ev.rotate_mask_sums(dt, &steps, &masks, &outputs)
    } else {
        let rotated = ev.rotate_many(dt, &direct)?;
        let heads = ev.encode_factor(&mask(lay, t, 1.0, |_, c| c == 0), dt)?;
        rotated
            .iter()
            .map(|r| segment_replicate(ev, &ev.mult_plaintext(r, &heads)?, lay.stride))
            .collect()
    }
}

/// `C = A·Bᵀ` for `A: m×d` and `B: k×d`; `C: m×k` in the same packing.
///
/// Each row `j` of `B` is copied into every segment, multiplied into each
/// tile of `A`, reduced across the segment and moved to column `j`.
/// Consumes [`MATMUL_DEPTH`] levels.
pub fn matmul_abt(
    ev: &Evaluator,
    a: &EncMatrix,
    b: &EncMatrix,
    refresher: &mut dyn Refresher,
) -> Result<EncMatrix> {
    same_packing(&a.layout, &b.layout)?;
    let (m, d, k) = (a.rows(), a.cols(), b.rows());
    if b.cols() != d {
        return Err(Error::Shape(format!("A is {m}x{d} but B is {k}x{}", b.cols())));
    }
    let lay = a.layout;
    if b.layout.tiles() != 1 {
        return Err(Error::Layout(format!("B has {k} rows, more than one tile holds")));
    }
    let out_layout = lay.with_shape(m, k)?;
    let [a, b]: [EncMatrix; 2] = ensure_levels(vec![a.clone(), b.clone()], &[2, 3], refresher, RefreshPurpose::Kernel)?
        .try_into()
        .unwrap();
    let a_tiles = a.tiles.iter().map(|t| ev.drop_to_level(t, 2)).collect::<Result<Vec<_>>>()?;
    let b0 = ev.drop_to_level(&b.tiles[0], 3)?;

    let rows = m.min(lay.rows_per_tile());
    let reps = replicate_rows(ev, &b0, &b.layout, k, rows)?;
    let mut acc: Vec<Option<Ciphertext>> = vec![None; lay.tiles()];
    let mut heads: Vec<Option<crate::ckks::Plaintext>> = vec![None; lay.tiles()];
    for (j, row) in reps.iter().enumerate() {
        for (t, tile) in a_tiles.iter().enumerate() {
            let prod = ev.mult(tile, row)?;
            let dots = segment_sum(ev, &prod, lay.stride)?;
            if heads[t].is_none() {
                heads[t] = Some(ev.encode_factor(&mask(&out_layout, t, 1.0, |_, c| c == 0), &dots)?);
            }
            let picked = ev.mult_plaintext(&dots, heads[t].as_ref().unwrap())?;
            acc[t] = accumulate(ev, acc[t].take(), ev.rotate(&picked, -(j as i64))?)?;
        }
    }
    EncMatrix::new(out_layout, acc.into_iter().map(Option::unwrap).collect())
}

/// `C = Dᵀ·X` for `D: m×k` and `X: m×d`; `C: k×d` in a single tile.
///
/// Column `j` of `D` is copied across each segment, multiplied into `X`,
/// summed over all rows and masked into row `j`. Consumes [`MATMUL_DEPTH`]
/// levels.
pub fn matmul_atb(
    ev: &Evaluator,
    dm: &EncMatrix,
    x: &EncMatrix,
    refresher: &mut dyn Refresher,
) -> Result<EncMatrix> {
    same_packing(&dm.layout, &x.layout)?;
    let (m, k, d) = (dm.rows(), dm.cols(), x.cols());
    if x.rows() != m {
        return Err(Error::Shape(format!("D is {m}x{k} but X is {}x{d}", x.rows())));
    }
    let lay = x.layout;
    if k > lay.rows_per_tile() {
        return Err(Error::Layout(format!("{k} output rows exceed one tile")));
    }
    let out_layout = lay.with_shape(k, d)?;
    let [dm, x]: [EncMatrix; 2] = ensure_levels(vec![dm.clone(), x.clone()], &[3, 2], refresher, RefreshPurpose::Kernel)?
        .try_into()
        .unwrap();

    let mut col_sums: Vec<Option<Ciphertext>> = vec![None; k];
    for (t, (dt, xt)) in dm.tiles.iter().zip(&x.tiles).enumerate() {
        let dt = ev.drop_to_level(dt, 3)?;
        let xt = ev.drop_to_level(xt, 2)?;
        let spread = replicate_columns(ev, &dt, &dm.layout, t, k, d)?;
        for (j, sp) in spread.iter().enumerate() {
            col_sums[j] = accumulate(ev, col_sums[j].take(), ev.mult(sp, &xt)?)?;
        }
    }
    let mut out: Option<Ciphertext> = None;
    for (j, cs) in col_sums.into_iter().enumerate() {
        let total = sum_segments(ev, &cs.unwrap(), lay.stride)?;
        let row = ev.mult_plain(&total, &mask(&out_layout, 0, 1.0, |r, _| r == j))?;
        out = accumulate(ev, out, row)?;
    }
    EncMatrix::new(out_layout, vec![out.unwrap()])
}
