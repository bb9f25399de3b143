//! `BTHE` containers for ciphertexts and keys.
//!
//! Layout: magic `BTHE`, u16 version, u8 kind, u8 reserved, 32-byte
//! parameter digest, then a kind-specific body. Residues are u64 LE in
//! evaluation form.

use super::context::{Ciphertext, CkksContext};
use super::keys::{EvalKeySet, KeySwitchKey, PublicKey, SecretKey};
use super::poly::RnsPoly;
use crate::error::{Error, Result};
use crate::wire::{put_f64, put_u16, put_u32, put_u64, Reader};

pub const MAGIC: &[u8; 4] = b"BTHE";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Ciphertext = 1,
    PublicKey = 2,
    SecretKey = 3,
    EvalKeys = 4,
}

impl Kind {
    fn from_u8(v: u8) -> Option<Self> {
        match v {
            1 => Some(Kind::Ciphertext),
            2 => Some(Kind::PublicKey),
            3 => Some(Kind::SecretKey),
            4 => Some(Kind::EvalKeys),
            _ => None,
        }
    }
}

fn header(out: &mut Vec<u8>, ctx: &CkksContext, kind: Kind) {
    out.extend_from_slice(MAGIC);
    put_u16(out, VERSION);
    out.push(kind as u8);
    out.push(0);
    out.extend_from_slice(&ctx.digest());
}

fn read_header(r: &mut Reader<'_>, ctx: &CkksContext, kind: Kind) -> Result<()> {
    r.expect_magic(MAGIC)?;
    let at = r.offset();
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(at, format!("unsupported version {version}")));
    }
    let at = r.offset();
    let k = r.u8()?;
    match Kind::from_u8(k) {
        Some(found) if found == kind => {}
        _ => return Err(Error::format(at, format!("expected kind {:?}, found tag {k}", kind))),
    }
    r.u8()?;
    let digest = r.array::<32>()?;
    if digest != ctx.digest() {
        return Err(Error::DigestMismatch);
    }
    Ok(())
}

/// Reads the kind tag without validating the rest.
pub fn peek_kind(bytes: &[u8]) -> Result<Kind> {
    let mut r = Reader::new(bytes);
    r.expect_magic(MAGIC)?;
    r.u16()?;
    let at = r.offset();
    let k = r.u8()?;
    Kind::from_u8(k).ok_or_else(|| Error::format(at, format!("unknown kind tag {k}")))
}

fn put_poly(out: &mut Vec<u8>, p: &RnsPoly) {
    for limb in &p.limbs {
        for &v in limb {
            put_u64(out, v);
        }
    }
}

/// Reads `limbs` limbs of degree `n`, validating residues against `primes`.
fn read_poly(r: &mut Reader<'_>, ctx: &CkksContext, primes: &[usize]) -> Result<RnsPoly> {
    let n = ctx.ring_degree();
    let mut limbs = Vec::with_capacity(primes.len());
    for &i in primes {
        let q = ctx.moduli()[i].value();
        let at = r.offset();
        let raw = r.take(8 * n)?;
        let limb: Vec<u64> = raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(pos) = limb.iter().position(|&v| v >= q) {
            return Err(Error::format(at + 8 * pos, "residue not reduced"));
        }
        limbs.push(limb);
    }
    Ok(RnsPoly { limbs })
}

pub fn ciphertext_to_bytes(ctx: &CkksContext, ct: &Ciphertext) -> Vec<u8> {
    let n = ctx.ring_degree();
    let mut out = Vec::with_capacity(64 + 16 * n * (ct.level + 1));
    header(&mut out, ctx, Kind::Ciphertext);
    put_u32(&mut out, ct.level as u32);
    put_f64(&mut out, ct.scale);
    put_f64(&mut out, ct.noise_hint);
    put_poly(&mut out, &ct.c0);
    put_poly(&mut out, &ct.c1);
    out
}

pub(crate) fn read_ciphertext(r: &mut Reader<'_>, ctx: &CkksContext) -> Result<Ciphertext> {
    read_header(r, ctx, Kind::Ciphertext)?;
    let at = r.offset();
    let level = r.u32()? as usize;
    if level > ctx.max_level() {
        return Err(Error::format(at, format!("level {level} beyond chain")));
    }
    let at = r.offset();
    let scale = r.f64()?;
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::format(at, "invalid scale"));
    }
    let noise_hint = r.f64()?;
    let primes: Vec<usize> = (0..=level).collect();
    let c0 = read_poly(r, ctx, &primes)?;
    let c1 = read_poly(r, ctx, &primes)?;
    Ok(Ciphertext {
        c0,
        c1,
        level,
        scale,
        noise_hint,
    })
}

pub fn ciphertext_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<Ciphertext> {
    let mut r = Reader::new(bytes);
    let ct = read_ciphertext(&mut r, ctx)?;
    r.finish()?;
    Ok(ct)
}

pub fn public_key_to_bytes(ctx: &CkksContext, pk: &PublicKey) -> Vec<u8> {
    let mut out = Vec::new();
    header(&mut out, ctx, Kind::PublicKey);
    put_poly(&mut out, &pk.b);
    put_poly(&mut out, &pk.a);
    out
}

pub fn public_key_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<PublicKey> {
    let mut r = Reader::new(bytes);
    read_header(&mut r, ctx, Kind::PublicKey)?;
    let primes: Vec<usize> = (0..=ctx.max_level()).collect();
    let b = read_poly(&mut r, ctx, &primes)?;
    let a = read_poly(&mut r, ctx, &primes)?;
    r.finish()?;
    Ok(PublicKey { b, a })
}

/// Secret coefficients as one signed byte each.
pub fn secret_key_to_bytes(ctx: &CkksContext, sk: &SecretKey) -> Vec<u8> {
    let mut out = Vec::new();
    header(&mut out, ctx, Kind::SecretKey);
    out.extend(sk.coeffs.iter().map(|&c| c as i8 as u8));
    out
}

pub fn secret_key_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<SecretKey> {
    let mut r = Reader::new(bytes);
    read_header(&mut r, ctx, Kind::SecretKey)?;
    let at = r.offset();
    let raw = r.take(ctx.ring_degree())?;
    let mut coeffs = Vec::with_capacity(raw.len());
    for (i, &b) in raw.iter().enumerate() {
        let c = b as i8 as i64;
        if !(-1..=1).contains(&c) {
            return Err(Error::format(at + i, "secret coefficient outside {-1,0,1}"));
        }
        coeffs.push(c);
    }
    r.finish()?;
    let poly = ctx.to_ntt(&coeffs, 0..ctx.moduli().len());
    Ok(SecretKey { coeffs, poly })
}

fn put_switch_key(out: &mut Vec<u8>, key: &KeySwitchKey) {
    for (b, a) in &key.digits {
        put_poly(out, b);
        put_poly(out, a);
    }
}

fn read_switch_key(r: &mut Reader<'_>, ctx: &CkksContext) -> Result<KeySwitchKey> {
    let primes: Vec<usize> = (0..ctx.moduli().len()).collect();
    let digits = (0..=ctx.max_level())
        .map(|_| Ok((read_poly(r, ctx, &primes)?, read_poly(r, ctx, &primes)?)))
        .collect::<Result<_>>()?;
    Ok(KeySwitchKey { digits })
}

pub fn eval_keys_to_bytes(ctx: &CkksContext, keys: &EvalKeySet) -> Vec<u8> {
    let mut out = Vec::new();
    header(&mut out, ctx, Kind::EvalKeys);
    put_switch_key(&mut out, &keys.relin);
    put_u32(&mut out, keys.rotations.len() as u32);
    for (g, key) in &keys.rotations {
        put_u64(&mut out, *g);
        put_switch_key(&mut out, key);
    }
    out
}

pub fn eval_keys_from_bytes(ctx: &CkksContext, bytes: &[u8]) -> Result<EvalKeySet> {
    let mut r = Reader::new(bytes);
    read_header(&mut r, ctx, Kind::EvalKeys)?;
    let relin = read_switch_key(&mut r, ctx)?;
    let count = r.count(8)?;
    let mut rotations = std::collections::BTreeMap::new();
    let two_n = 2 * ctx.ring_degree() as u64;
    for _ in 0..count {
        let at = r.offset();
        let g = r.u64()?;
        if g % 2 == 0 || g >= two_n {
            return Err(Error::format(at, format!("invalid Galois element {g}")));
        }
        rotations.insert(g, read_switch_key(&mut r, ctx)?);
    }
    r.finish()?;
    Ok(EvalKeySet { relin, rotations })
}
