//! Encrypted matrices and the client-side refresh that restores their depth.

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::layout::TileLayout;
use super::matrix::PlainMatrix;
use crate::ckks::keys::{decrypt_values, encrypt, encrypt_trivial, PublicKey, SecretKey};
use crate::ckks::serial::{ciphertext_to_bytes, read_ciphertext};
use crate::ckks::{Ciphertext, CkksContext};
use crate::error::{Error, Result};
use crate::wire::{put_u16, put_u32, put_u64, Reader};

/// A matrix packed under `layout`, one ciphertext per tile.
#[derive(Clone, Debug, PartialEq)]
pub struct EncMatrix {
    pub layout: TileLayout,
    pub tiles: Vec<Ciphertext>,
}

impl EncMatrix {
    pub fn new(layout: TileLayout, tiles: Vec<Ciphertext>) -> Result<Self> {
        layout.validate()?;
        if tiles.len() != layout.tiles() {
            return Err(Error::Layout(format!(
                "{} tiles supplied, layout needs {}",
                tiles.len(),
                layout.tiles()
            )));
        }
        Ok(Self { layout, tiles })
    }

    pub fn rows(&self) -> usize {
        self.layout.rows
    }

    pub fn cols(&self) -> usize {
        self.layout.cols
    }

    /// Lowest level among the tiles.
    pub fn level(&self) -> usize {
        self.tiles.iter().map(|t| t.level).min().unwrap_or(0)
    }
}

fn tile_values(layout: &TileLayout, m: &PlainMatrix, tile: usize) -> Vec<f64> {
    let start = layout.tile_rows(tile).start;
    layout.tile_vector(tile, |r, c| m.get(start + r, c))
}

fn check_fits(m: &PlainMatrix, stride: usize, ctx: &CkksContext) -> Result<TileLayout> {
    TileLayout::new(m.rows(), m.cols(), stride, ctx.slots())
}

pub fn encrypt_matrix<R: Rng + ?Sized>(
    ctx: &CkksContext,
    pk: &PublicKey,
    m: &PlainMatrix,
    stride: usize,
    level: usize,
    rng: &mut R,
) -> Result<EncMatrix> {
    let layout = check_fits(m, stride, ctx)?;
    let scale = ctx.canonical_scale(level);
    let tiles = (0..layout.tiles())
        .map(|t| {
            let pt = ctx.encode(&tile_values(&layout, m, t), level, scale)?;
            Ok(encrypt(ctx, pk, &pt, rng))
        })
        .collect::<Result<_>>()?;
    EncMatrix::new(layout, tiles)
}

/// Public encoding without randomness; for values every party already knows.
pub fn trivial_matrix(ctx: &CkksContext, m: &PlainMatrix, stride: usize, level: usize) -> Result<EncMatrix> {
    let layout = check_fits(m, stride, ctx)?;
    let scale = ctx.canonical_scale(level);
    let tiles = (0..layout.tiles())
        .map(|t| Ok(encrypt_trivial(ctx, &ctx.encode(&tile_values(&layout, m, t), level, scale)?)))
        .collect::<Result<_>>()?;
    EncMatrix::new(layout, tiles)
}

pub fn decrypt_matrix(ctx: &CkksContext, sk: &SecretKey, em: &EncMatrix) -> PlainMatrix {
    let layout = em.layout;
    let mut out = PlainMatrix::zeros(layout.rows, layout.cols);
    for (t, ct) in em.tiles.iter().enumerate() {
        let v = decrypt_values(ctx, sk, ct);
        for (i, r) in layout.tile_rows(t).enumerate() {
            for c in 0..layout.cols {
                out.set(r, c, v[i * layout.stride + c]);
            }
        }
    }
    out
}

/// Why a refresh was requested; recorded in transcripts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum RefreshPurpose {
    Weights = 1,
    Logits = 2,
    Softmax = 3,
    Gradient = 4,
    Kernel = 5,
}

impl RefreshPurpose {
    pub fn from_u8(v: u8) -> Option<Self> {
        use RefreshPurpose::*;
        [Weights, Logits, Softmax, Gradient, Kernel]
            .into_iter()
            .find(|p| *p as u8 == v)
    }
}

/// Restores ciphertext depth. The cloud has no bootstrapping, so a refresh
/// is a round trip to the key holder; tests use a local key holder.
pub trait Refresher {
    /// Returns the same matrices re-encrypted at the top level.
    fn refresh_many(&mut self, ms: Vec<EncMatrix>, purpose: RefreshPurpose) -> Result<Vec<EncMatrix>>;

    fn refresh(&mut self, m: EncMatrix, purpose: RefreshPurpose) -> Result<EncMatrix> {
        let mut out = self.refresh_many(vec![m], purpose)?;
        out.pop().ok_or_else(|| Error::Protocol("empty refresh response".into()))
    }
}

/// Refuses every refresh: evaluation must fit in the remaining depth.
#[derive(Debug, Default)]
pub struct NoRefresh;

impl Refresher for NoRefresh {
    fn refresh_many(&mut self, ms: Vec<EncMatrix>, _purpose: RefreshPurpose) -> Result<Vec<EncMatrix>> {
        Err(Error::DepthExhausted {
            op: "refresh",
            need: 1,
            have: ms.iter().map(EncMatrix::level).min().unwrap_or(0),
        })
    }
}

/// Decrypt and re-encrypt with the secret key in-process.
pub struct LocalRefresher<'a> {
    ctx: &'a CkksContext,
    sk: &'a SecretKey,
    pk: &'a PublicKey,
    rng: ChaCha20Rng,
    count: usize,
}

impl<'a> LocalRefresher<'a> {
    pub fn new(ctx: &'a CkksContext, sk: &'a SecretKey, pk: &'a PublicKey, rng: ChaCha20Rng) -> Self {
        Self {
            ctx,
            sk,
            pk,
            rng,
            count: 0,
        }
    }

    /// Number of refresh round trips served.
    pub fn count(&self) -> usize {
        self.count
    }
}

/// Decrypts and re-encrypts at the top level, zeroing every slot the layout
/// does not use.
pub fn reencrypt<R: Rng + ?Sized>(
    ctx: &CkksContext,
    sk: &SecretKey,
    pk: &PublicKey,
    m: &EncMatrix,
    rng: &mut R,
) -> Result<EncMatrix> {
    let plain = decrypt_matrix(ctx, sk, m);
    encrypt_matrix(ctx, pk, &plain, m.layout.stride, ctx.max_level(), rng)
}

impl Refresher for LocalRefresher<'_> {
    fn refresh_many(&mut self, ms: Vec<EncMatrix>, _purpose: RefreshPurpose) -> Result<Vec<EncMatrix>> {
        self.count += 1;
        ms.iter()
            .map(|m| reencrypt(self.ctx, self.sk, self.pk, m, &mut self.rng))
            .collect()
    }
}

/// Brings every matrix to at least `need` levels, refreshing the short ones
/// in a single round trip.
pub fn ensure_levels(
    ms: Vec<EncMatrix>,
    need: &[usize],
    refresher: &mut dyn Refresher,
    purpose: RefreshPurpose,
) -> Result<Vec<EncMatrix>> {
    debug_assert_eq!(ms.len(), need.len());
    let short: Vec<usize> = (0..ms.len()).filter(|&i| ms[i].level() < need[i]).collect();
    if short.is_empty() {
        return Ok(ms);
    }
    let mut ms: Vec<Option<EncMatrix>> = ms.into_iter().map(Some).collect();
    let batch: Vec<EncMatrix> = short.iter().map(|&i| ms[i].take().unwrap()).collect();
    let fresh = refresher.refresh_many(batch, purpose)?;
    if fresh.len() != short.len() {
        return Err(Error::Protocol(format!(
            "refresh returned {} matrices for {}",
            fresh.len(),
            short.len()
        )));
    }
    for (i, m) in short.into_iter().zip(fresh) {
        if m.level() < need[i] {
            return Err(Error::DepthExhausted {
                op: "refresh",
                need: need[i],
                have: m.level(),
            });
        }
        ms[i] = Some(m);
    }
    Ok(ms.into_iter().map(Option::unwrap).collect())
}

pub fn ensure_level(
    m: EncMatrix,
    need: usize,
    refresher: &mut dyn Refresher,
    purpose: RefreshPurpose,
) -> Result<EncMatrix> {
    Ok(ensure_levels(vec![m], &[need], refresher, purpose)?.pop().unwrap())
}

pub const MATRIX_MAGIC: &[u8; 4] = b"BTEM";
pub const MATRIX_VERSION: u16 = 1;

/// `BTEM` container: header, layout, then each tile as a length-prefixed
/// `BTHE` ciphertext.
pub fn matrix_to_bytes(ctx: &CkksContext, m: &EncMatrix) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MATRIX_MAGIC);
    put_u16(&mut out, MATRIX_VERSION);
    out.extend_from_slice(&ctx.digest());
    for v in [m.layout.rows, m.layout.cols, m.layout.stride, m.layout.slots, m.tiles.len()] {
        put_u32(&mut out, v as u32);
    }
    for t in &m.tiles {
        let bytes = ciphertext_to_bytes(ctx, t);
        put_u64(&mut out, bytes.len() as u64);
        out.extend_from_slice(&bytes);
    }
    out
}

pub(crate) fn read_matrix(r: &mut Reader<'_>, ctx: &CkksContext) -> Result<EncMatrix> {
    r.expect_magic(MATRIX_MAGIC)?;
    let at = r.offset();
    let version = r.u16()?;
    if version != MATRIX_VERSION {
        return Err(Error::format(at, format!("unsupported matrix version {version}")));
    }
    if r.array::<32>()? != ctx.digest() {
        return Err(Error::DigestMismatch);
    }
    let at = r.offset();
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let stride = r.u32()? as usize;
    let slots = r.u32()? as usize;
    let count = r.u32()? as usize;
    let layout = TileLayout::new(rows, cols, stride, slots)
        .map_err(|e| Error::format(at, format!("invalid layout: {e}")))?;
    if slots != ctx.slots() || count != layout.tiles() {
        return Err(Error::format(at, "layout does not match tile count or slot count"));
    }
    let mut tiles = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.offset();
        let len = r.u64()? as usize;
        let body = r.take(len).map_err(|_| Error::format(at, "tile length exceeds data"))?;
        let mut sub = Reader::new(body);
        let ct = read_ciphertext(&mut sub, ctx).map_err(|e| match e {
            Error::Format { offset, msg } => Error::format(at + 8 + offset, msg),
            other => other,
        })?;
        sub.finish()?;
        tiles.push(ct);
    }
    EncMatrix::new(layout, tiles)
}

pub fn matrix_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<EncMatrix> {
    let mut r = Reader::new(bytes);
    let m = read_matrix(&mut r, ctx)?;
    r.finish()?;
    Ok(m)
}
