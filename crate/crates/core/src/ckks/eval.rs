//! Homomorphic operations on ciphertexts.

use std::sync::Arc;

use rayon::prelude::*;

use super::context::{Ciphertext, CkksContext, Plaintext};
use super::keys::{EvalKeySet, KeySwitchKey};
use super::poly::RnsPoly;
use crate::error::{Error, Result};

/// Largest relative scale difference tolerated by addition.
pub const SCALE_TOLERANCE: f64 = 1.0 / 1024.0;

/// A polynomial split into per-prime digits, each lifted to `q_0..=q_l` and
/// the special prime and kept in evaluation form.
struct Decomposed {
    level: usize,
    digits: Vec<RnsPoly>,
}

/// Signed power-of-two terms summing to `k`, with the fewest nonzero digits.
fn naf(mut k: i64) -> Vec<i64> {
    let mut terms = Vec::new();
    let mut p = 1i64;
    while k != 0 {
        if k & 1 != 0 {
            let z = 2 - k.rem_euclid(4);
            terms.push(z * p);
            k -= z;
        }
        k /= 2;
        p *= 2;
    }
    terms
}

/// Decomposes a left rotation by `step` into power-of-two rotations.
pub fn rotation_terms(step: i64, slots: usize) -> Vec<i64> {
    let s = slots as i64;
    let k = step.rem_euclid(s);
    if k == 0 {
        return Vec::new();
    }
    let a = naf(k);
    let b = naf(k - s);
    let best = if b.len() < a.len() { b } else { a };
    best.into_iter().filter(|t| t.rem_euclid(s) != 0).collect()
}

#[derive(Clone)]
pub struct Evaluator {
    ctx: Arc<CkksContext>,
    keys: Arc<EvalKeySet>,
}

impl std::fmt::Debug for Evaluator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Evaluator").field("ctx", &self.ctx).finish()
    }
}

impl Evaluator {
    pub fn new(ctx: Arc<CkksContext>, keys: Arc<EvalKeySet>) -> Self {
        Self { ctx, keys }
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.ctx
    }

    pub fn keys(&self) -> &Arc<EvalKeySet> {
        &self.keys
    }

    /// Parallelism only pays off when the pool has spare threads and the ring
    /// is large enough to amortise handing work to it.
    fn parallel(&self) -> bool {
        self.ctx.ring_degree() >= 2048 && rayon::current_num_threads() > 1
    }

    fn map_indices<T: Send>(&self, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        if self.parallel() {
            (0..n).into_par_iter().map(f).collect()
        } else {
            (0..n).map(f).collect()
        }
    }

    fn for_each_limb(&self, limbs: &mut [Vec<u64>], f: impl Fn(usize, &mut Vec<u64>) + Sync + Send) {
        if self.parallel() {
            limbs.par_iter_mut().enumerate().for_each(|(i, l)| f(i, l));
        } else {
            limbs.iter_mut().enumerate().for_each(|(i, l)| f(i, l));
        }
    }

    fn decompose(&self, d: &RnsPoly, level: usize) -> Decomposed {
        let ctx = &*self.ctx;
        let moduli = ctx.moduli();
        let sp = ctx.special_index();
        let targets: Vec<usize> = (0..=level).chain(std::iter::once(sp)).collect();
        let digits = self.map_indices(level + 1, |i| {
                let qi = &moduli[i];
                let mut coeff = d.limbs[i].clone();
                ctx.ntt_table(i).inverse(&mut coeff);
                let centered: Vec<i64> = coeff.iter().map(|&c| qi.center(c)).collect();
                let limbs = targets
                    .iter()
                    .map(|&t| {
                        if t == i {
                            d.limbs[i].clone()
                        } else {
                            let qt = &moduli[t];
                            let mut v: Vec<u64> = centered.iter().map(|&c| qt.reduce_i64(c)).collect();
                            ctx.ntt_table(t).forward(&mut v);
                            v
                        }
                    })
                    .collect();
                RnsPoly { limbs }
            });
        Decomposed { level, digits }
    }

    /// Inner product of the digits with `key` over `q_0..=q_l` and the special
    /// prime (last limb). With `perm`, the digits are first mapped through a
    /// Galois permutation.
    fn key_products(&self, dec: &Decomposed, key: &KeySwitchKey, perm: Option<&[u32]>) -> (RnsPoly, RnsPoly) {
        let ctx = &*self.ctx;
        let moduli = ctx.moduli();
        let n = ctx.ring_degree();
        let level = dec.level;
        let sp = ctx.special_index();
        let key_index = |ti: usize| if ti <= level { ti } else { sp };
        let acc: Vec<(Vec<u64>, Vec<u64>)> = self.map_indices(level + 2, |ti| {
            let ki = key_index(ti);
            let q = &moduli[ki];
            let mut a0 = vec![0u128; n];
            let mut a1 = vec![0u128; n];
            for (digit, (kb, ka)) in dec.digits.iter().zip(&key.digits) {
                let src = &digit.limbs[ti];
                let kb = &kb.limbs[ki];
                let ka = &ka.limbs[ki];
                match perm {
                    Some(p) => {
                        for x in 0..n {
                            let v = src[p[x] as usize] as u128;
                            a0[x] += v * kb[x] as u128;
                            a1[x] += v * ka[x] as u128;
                        }
                    }
                    None => {
                        for x in 0..n {
                            let v = src[x] as u128;
                            a0[x] += v * kb[x] as u128;
                            a1[x] += v * ka[x] as u128;
                        }
                    }
                }
            }
            (
                a0.into_iter().map(|v| q.reduce_u128(v)).collect(),
                a1.into_iter().map(|v| q.reduce_u128(v)).collect(),
            )
        });
        let (r0, r1) = acc.into_iter().unzip();
        (RnsPoly { limbs: r0 }, RnsPoly { limbs: r1 })
    }

    /// Key switch followed by division by the special prime.
    fn apply_key(&self, dec: &Decomposed, key: &KeySwitchKey, perm: Option<&[u32]>) -> (RnsPoly, RnsPoly) {
        let (mut u0, mut u1) = self.key_products(dec, key, perm);
        let s0 = u0.limbs.pop().expect("special limb");
        let s1 = u1.limbs.pop().expect("special limb");
        (self.mod_down(u0, s0), self.mod_down(u1, s1))
    }

    fn mod_down(&self, mut poly: RnsPoly, mut special: Vec<u64>) -> RnsPoly {
        let ctx = &*self.ctx;
        let sp = ctx.special_index();
        let p = &ctx.moduli()[sp];
        ctx.ntt_table(sp).inverse(&mut special);
        let centered: Vec<i64> = special.iter().map(|&c| p.center(c)).collect();
        self.for_each_limb(&mut poly.limbs, |i, limb| {
            let qi = &ctx.moduli()[i];
            let mut t: Vec<u64> = centered.iter().map(|&c| qi.reduce_i64(c)).collect();
            ctx.ntt_table(i).forward(&mut t);
            let (inv, inv_s) = ctx.special_inv(i);
            for (x, y) in limb.iter_mut().zip(&t) {
                *x = qi.mul_shoup(qi.sub(*x, *y), inv, inv_s);
            }
        });
        poly
    }

    fn rescale_poly(&self, poly: &mut RnsPoly, level: usize) {
        let ctx = &*self.ctx;
        let ql = &ctx.moduli()[level];
        let mut last = poly.limbs.pop().expect("limb to drop");
        ctx.ntt_table(level).inverse(&mut last);
        let centered: Vec<i64> = last.iter().map(|&c| ql.center(c)).collect();
        self.for_each_limb(&mut poly.limbs, |i, limb| {
            let qi = &ctx.moduli()[i];
            let mut t: Vec<u64> = centered.iter().map(|&c| qi.reduce_i64(c)).collect();
            ctx.ntt_table(i).forward(&mut t);
            let (inv, inv_s) = ctx.rescale_inv(level, i);
            for (x, y) in limb.iter_mut().zip(&t) {
                *x = qi.mul_shoup(qi.sub(*x, *y), inv, inv_s);
            }
        });
    }

    /// Divides by the top prime of the current level; the level drops by one.
    pub fn rescale(&self, ct: &Ciphertext) -> Result<Ciphertext> {
        let mut out = ct.clone();
        self.rescale_in_place(&mut out)?;
        Ok(out)
    }

    fn rescale_in_place(&self, ct: &mut Ciphertext) -> Result<()> {
        if ct.level == 0 {
            return Err(Error::DepthExhausted {
                op: "rescale",
                need: 1,
                have: 0,
            });
        }
        let l = ct.level;
        self.rescale_poly(&mut ct.c0, l);
        self.rescale_poly(&mut ct.c1, l);
        let q = self.ctx.params().modulus_chain[l] as f64;
        ct.scale /= q;
        ct.level = l - 1;
        let rounding = 0.5 * (self.ctx.ring_degree() as f64).log2();
        ct.noise_hint = (ct.noise_hint - q.log2()).max(rounding);
        Ok(())
    }

    /// Moves `ct` down to `level` and onto that level's canonical scale.
    /// Costs nothing in precision beyond one rescale rounding.
    pub fn drop_to_level(&self, ct: &Ciphertext, level: usize) -> Result<Ciphertext> {
        if ct.level == level {
            return Ok(ct.clone());
        }
        if ct.level < level {
            return Err(Error::Params(format!(
                "cannot raise a ciphertext from level {} to {level}",
                ct.level
            )));
        }
        let mut out = ct.clone();
        out.c0.truncate(level + 2);
        out.c1.truncate(level + 2);
        out.level = level + 1;
        let q = self.ctx.params().modulus_chain[level + 1] as f64;
        let factor = (self.ctx.canonical_scale(level) * q / ct.scale).round();
        if factor < 1.0 || !factor.is_finite() {
            return Err(Error::ScaleMismatch {
                lhs: ct.scale,
                rhs: self.ctx.canonical_scale(level),
            });
        }
        let moduli = self.ctx.chain_moduli(level + 1);
        out.c0.mul_integer_assign(factor as i128, moduli);
        out.c1.mul_integer_assign(factor as i128, moduli);
        out.scale *= factor;
        self.rescale_in_place(&mut out)?;
        Ok(out)
    }

    fn align<'a>(
        &self,
        a: &'a Ciphertext,
        b: &'a Ciphertext,
    ) -> Result<(std::borrow::Cow<'a, Ciphertext>, std::borrow::Cow<'a, Ciphertext>)> {
        use std::borrow::Cow;
        Ok(match a.level.cmp(&b.level) {
            std::cmp::Ordering::Equal => (Cow::Borrowed(a), Cow::Borrowed(b)),
            std::cmp::Ordering::Greater => (Cow::Owned(self.drop_to_level(a, b.level)?), Cow::Borrowed(b)),
            std::cmp::Ordering::Less => (Cow::Borrowed(a), Cow::Owned(self.drop_to_level(b, a.level)?)),
        })
    }

    fn check_scales(lhs: f64, rhs: f64) -> Result<()> {
        if ((lhs - rhs) / lhs).abs() > SCALE_TOLERANCE {
            Err(Error::ScaleMismatch { lhs, rhs })
        } else {
            Ok(())
        }
    }

    pub fn add(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let (a, b) = self.align(a, b)?;
        Self::check_scales(a.scale, b.scale)?;
        let moduli = self.ctx.chain_moduli(a.level);
        let mut out = a.into_owned();
        out.c0.add_assign(&b.c0, moduli);
        out.c1.add_assign(&b.c1, moduli);
        out.noise_hint = out.noise_hint.max(b.noise_hint) + 0.5;
        Ok(out)
    }

    pub fn sub(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let (a, b) = self.align(a, b)?;
        Self::check_scales(a.scale, b.scale)?;
        let moduli = self.ctx.chain_moduli(a.level);
        let mut out = a.into_owned();
        out.c0.sub_assign(&b.c0, moduli);
        out.c1.sub_assign(&b.c1, moduli);
        out.noise_hint = out.noise_hint.max(b.noise_hint) + 0.5;
        Ok(out)
    }

    pub fn negate(&self, a: &Ciphertext) -> Ciphertext {
        let moduli = self.ctx.chain_moduli(a.level);
        let mut out = a.clone();
        out.c0.neg_assign(moduli);
        out.c1.neg_assign(moduli);
        out
    }

    /// Adds `c` to every slot. Consumes no level.
    pub fn add_const(&self, a: &Ciphertext, c: f64) -> Ciphertext {
        let moduli = self.ctx.chain_moduli(a.level);
        let mut out = a.clone();
        out.c0.add_integer_assign((c * a.scale).round() as i128, moduli);
        out
    }

    /// Adds a plaintext vector encoded at the ciphertext's own scale.
    pub fn add_plain(&self, a: &Ciphertext, values: &[f64]) -> Result<Ciphertext> {
        let pt = self.ctx.encode(values, a.level, a.scale)?;
        let mut out = a.clone();
        out.c0.add_assign(&pt.poly, self.ctx.chain_moduli(a.level));
        Ok(out)
    }

    /// Multiplies every slot by an integer. Consumes no level.
    pub fn mult_integer(&self, a: &Ciphertext, k: i64) -> Ciphertext {
        let moduli = self.ctx.chain_moduli(a.level);
        let mut out = a.clone();
        out.c0.mul_integer_assign(k as i128, moduli);
        out.c1.mul_integer_assign(k as i128, moduli);
        out.noise_hint += (k.unsigned_abs().max(1) as f64).log2();
        out
    }

    /// Scale at which a plaintext factor must be encoded so that the product
    /// rescales onto the canonical scale of the next level.
    fn factor_scale(&self, a: &Ciphertext) -> f64 {
        let l = a.level;
        self.ctx.canonical_scale(l - 1) * self.ctx.params().modulus_chain[l] as f64 / a.scale
    }

    fn need_level(op: &'static str, a: &Ciphertext) -> Result<()> {
        if a.level == 0 {
            Err(Error::DepthExhausted { op, need: 1, have: 0 })
        } else {
            Ok(())
        }
    }

    /// Multiplies every slot by `c`. Consumes one level.
    pub fn mult_const(&self, a: &Ciphertext, c: f64) -> Result<Ciphertext> {
        Self::need_level("mult_const", a)?;
        let sp = self.factor_scale(a);
        let k = (c * sp).round();
        if !k.is_finite() || k.abs() >= 2f64.powi(100) {
            return Err(Error::Params(format!("constant {c} too large to encode")));
        }
        let moduli = self.ctx.chain_moduli(a.level);
        let mut out = a.clone();
        out.c0.mul_integer_assign(k as i128, moduli);
        out.c1.mul_integer_assign(k as i128, moduli);
        out.scale *= sp;
        self.rescale_in_place(&mut out)?;
        Ok(out)
    }

    /// Slot-wise product with a plaintext vector. Consumes one level.
    pub fn mult_plain(&self, a: &Ciphertext, values: &[f64]) -> Result<Ciphertext> {
        Self::need_level("mult_plain", a)?;
        let pt = self.ctx.encode(values, a.level, self.factor_scale(a))?;
        self.mult_plaintext(a, &pt)
    }

    /// Product with an already encoded plaintext at the same level. Consumes one level.
    pub fn mult_plaintext(&self, a: &Ciphertext, pt: &Plaintext) -> Result<Ciphertext> {
        Self::need_level("mult_plain", a)?;
        if pt.level < a.level {
            return Err(Error::Params("plaintext level below ciphertext level".into()));
        }
        let moduli = self.ctx.chain_moduli(a.level);
        let mut p = pt.poly.clone();
        p.truncate(a.level + 1);
        let mut out = a.clone();
        out.c0.mul_assign(&p, moduli);
        out.c1.mul_assign(&p, moduli);
        out.scale *= pt.scale;
        self.rescale_in_place(&mut out)?;
        Ok(out)
    }

    /// Encodes `values` so that a product with `ct` lands on the canonical
    /// scale of the next level.
    pub fn encode_factor(&self, values: &[f64], ct: &Ciphertext) -> Result<Plaintext> {
        Self::need_level("encode_factor", ct)?;
        self.ctx.encode(values, ct.level, self.factor_scale(ct))
    }

    /// `Σ ct_i ⊙ pt_i` with a single rescale. All ciphertexts must share a
    /// level and scale, and all plaintexts a scale. Consumes one level.
    pub fn mult_plain_sum(&self, terms: &[(&Ciphertext, &Plaintext)]) -> Result<Ciphertext> {
        let (first, pt0) = *terms
            .first()
            .ok_or_else(|| Error::Params("empty plaintext product sum".into()))?;
        Self::need_level("mult_plain_sum", first)?;
        let l = first.level;
        let moduli = self.ctx.chain_moduli(l);
        let n = self.ctx.ring_degree();
        let mut acc0 = vec![vec![0u128; n]; l + 1];
        let mut acc1 = vec![vec![0u128; n]; l + 1];
        let mut noise = first.noise_hint;
        // products are below 2^122; seven of them plus a residue stay below 2^125
        const BATCH: usize = 7;
        for (chunk_no, chunk) in terms.chunks(BATCH).enumerate() {
            for &(ct, pt) in chunk {
                if ct.level != l || pt.level < l {
                    return Err(Error::Params("mixed levels in plaintext product sum".into()));
                }
                Self::check_scales(first.scale, ct.scale)?;
                Self::check_scales(pt0.scale, pt.scale)?;
                noise = noise.max(ct.noise_hint);
                for i in 0..=l {
                    let p = &pt.poly.limbs[i];
                    for (x, (&a, &b)) in acc0[i].iter_mut().zip(ct.c0.limbs[i].iter().zip(p)) {
                        *x += a as u128 * b as u128;
                    }
                    for (x, (&a, &b)) in acc1[i].iter_mut().zip(ct.c1.limbs[i].iter().zip(p)) {
                        *x += a as u128 * b as u128;
                    }
                }
            }
            if chunk_no + 1 < terms.len().div_ceil(BATCH) {
                for i in 0..=l {
                    let q = &moduli[i];
                    acc0[i].iter_mut().for_each(|x| *x = q.reduce_u128(*x) as u128);
                    acc1[i].iter_mut().for_each(|x| *x = q.reduce_u128(*x) as u128);
                }
            }
        }
        let finish = |acc: Vec<Vec<u128>>| RnsPoly {
            limbs: acc
                .into_iter()
                .zip(moduli)
                .map(|(v, q)| v.into_iter().map(|x| q.reduce_u128(x)).collect())
                .collect(),
        };
        let mut out = Ciphertext {
            c0: finish(acc0),
            c1: finish(acc1),
            level: l,
            scale: first.scale * pt0.scale,
            noise_hint: noise + (terms.len() as f64).log2().max(0.0) + 1.0,
        };
        self.rescale_in_place(&mut out)?;
        Ok(out)
    }

    /// Ciphertext product with relinearization and rescale. Consumes one level.
    pub fn mult(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        let (a, b) = self.align(a, b)?;
        Self::need_level("mult", &a)?;
        let l = a.level;
        let moduli = self.ctx.chain_moduli(l);
        let d0 = a.c0.mul(&b.c0, moduli);
        let mut d1 = a.c0.mul(&b.c1, moduli);
        d1.add_assign(&a.c1.mul(&b.c0, moduli), moduli);
        let d2 = a.c1.mul(&b.c1, moduli);
        self.finish_product(d0, d1, d2, l, a.scale * b.scale, a.noise_hint.max(b.noise_hint))
    }

    pub fn square(&self, a: &Ciphertext) -> Result<Ciphertext> {
        Self::need_level("square", a)?;
        let l = a.level;
        let moduli = self.ctx.chain_moduli(l);
        let d0 = a.c0.mul(&a.c0, moduli);
        let mut d1 = a.c0.mul(&a.c1, moduli);
        d1.add_assign(&d1.clone(), moduli);
        let d2 = a.c1.mul(&a.c1, moduli);
        self.finish_product(d0, d1, d2, l, a.scale * a.scale, a.noise_hint)
    }

    fn finish_product(
        &self,
        mut d0: RnsPoly,
        mut d1: RnsPoly,
        d2: RnsPoly,
        level: usize,
        scale: f64,
        noise: f64,
    ) -> Result<Ciphertext> {
        let moduli = self.ctx.chain_moduli(level);
        let dec = self.decompose(&d2, level);
        let (u0, u1) = self.apply_key(&dec, &self.keys.relin, None);
        d0.add_assign(&u0, moduli);
        d1.add_assign(&u1, moduli);
        let mut out = Ciphertext {
            c0: d0,
            c1: d1,
            level,
            scale,
            noise_hint: noise + 41.0,
        };
        self.rescale_in_place(&mut out)?;
        Ok(out)
    }

    fn key_for(&self, step: i64) -> Option<(u64, &KeySwitchKey)> {
        let g = self.ctx.galois_element(step);
        self.keys.rotation_key(g).map(|k| (g, k))
    }

    fn apply_galois(&self, ct: &Ciphertext, dec: &Decomposed, galois: u64, key: &KeySwitchKey) -> Ciphertext {
        let perm = self.ctx.galois_permutation(galois);
        let moduli = self.ctx.chain_moduli(ct.level);
        let (u0, u1) = self.apply_key(dec, key, Some(&perm));
        let mut c0 = ct.c0.permute(&perm);
        c0.add_assign(&u0, moduli);
        Ciphertext {
            c0,
            c1: u1,
            level: ct.level,
            scale: ct.scale,
            noise_hint: ct.noise_hint + 0.5,
        }
    }

    /// Rotates slots left by `step` (right for negative steps). Steps without a
    /// dedicated key are composed from power-of-two rotations.
    pub fn rotate(&self, ct: &Ciphertext, step: i64) -> Result<Ciphertext> {
        let slots = self.ctx.slots() as i64;
        if step.rem_euclid(slots) == 0 {
            return Ok(ct.clone());
        }
        if let Some((g, key)) = self.key_for(step) {
            let dec = self.decompose(&ct.c1, ct.level);
            return Ok(self.apply_galois(ct, &dec, g, key));
        }
        let terms = rotation_terms(step, self.ctx.slots());
        let mut keys = Vec::with_capacity(terms.len());
        for &t in &terms {
            keys.push(self.key_for(t).ok_or(Error::MissingRotationKey(t))?);
        }
        let mut out = ct.clone();
        for (g, key) in keys {
            let dec = self.decompose(&out.c1, out.level);
            out = self.apply_galois(&out, &dec, g, key);
        }
        Ok(out)
    }

    /// Several rotations of one ciphertext; steps with a dedicated key share a
    /// single digit decomposition.
    pub fn rotate_many(&self, ct: &Ciphertext, steps: &[i64]) -> Result<Vec<Ciphertext>> {
        let slots = self.ctx.slots() as i64;
        let direct = steps
            .iter()
            .filter(|&&s| s.rem_euclid(slots) != 0 && self.key_for(s).is_some())
            .count();
        let dec = (direct > 1).then(|| self.decompose(&ct.c1, ct.level));
        steps
            .iter()
            .map(|&s| match (&dec, self.key_for(s)) {
                (Some(dec), Some((g, key))) if s.rem_euclid(slots) != 0 => {
                    Ok(self.apply_galois(ct, dec, g, key))
                }
                _ => self.rotate(ct, s),
            })
            .collect()
    }

    /// For each output `j`, `Σ mask_m ⊙ rot(ct, steps[i])` over the pairs
    /// `(i, m)` in `outputs[j]`, with one rescale. Every nonzero step needs a
    /// dedicated key. The rotations share one digit decomposition and stay
    /// scaled by the special prime until the sums are formed, so each output
    /// pays for a single division by it. Consumes one level.
    pub fn rotate_mask_sums(
        &self,
        ct: &Ciphertext,
        steps: &[i64],
        masks: &[Vec<f64>],
        outputs: &[Vec<(usize, usize)>],
    ) -> Result<Vec<Ciphertext>> {
        Self::need_level("rotate_mask_sums", ct)?;
        let ctx = &*self.ctx;
        let slots = ctx.slots() as i64;
        let l = ct.level;
        let sp = ctx.special_index();
        let moduli = ctx.moduli();
        let n = ctx.ring_degree();
        let mut keys = Vec::with_capacity(steps.len());
        for &s in steps {
            if s.rem_euclid(slots) == 0 {
                keys.push(None);
            } else {
                keys.push(Some(self.key_for(s).ok_or(Error::MissingRotationKey(s))?));
            }
        }
        for out in outputs {
            if out.iter().any(|&(i, m)| i >= steps.len() || m >= masks.len()) {
                return Err(Error::Params("rotation or mask index out of range".into()));
            }
        }
        let dec = keys.iter().any(Option::is_some).then(|| self.decompose(&ct.c1, l));
        // rotated copies of P·ct over q_0..=q_l and P
        let lift = |poly: &RnsPoly, perm: Option<&[u32]>| -> RnsPoly {
            let mut limbs: Vec<Vec<u64>> = (0..=l)
                .map(|i| {
                    let q = &moduli[i];
                    let pm = ctx.special_mod(i);
                    let ps = q.shoup(pm);
                    let src = &poly.limbs[i];
                    match perm {
                        Some(p) => p.iter().map(|&x| q.mul_shoup(src[x as usize], pm, ps)).collect(),
                        None => src.iter().map(|&x| q.mul_shoup(x, pm, ps)).collect(),
                    }
                })
                .collect();
            limbs.push(vec![0u64; n]);
            RnsPoly { limbs }
        };
        let ext_moduli: Vec<_> = (0..=l).chain(std::iter::once(sp)).map(|i| moduli[i]).collect();
        let rotated: Vec<(RnsPoly, RnsPoly)> = keys
            .iter()
            .map(|k| match k {
                None => (lift(&ct.c0, None), lift(&ct.c1, None)),
                Some((g, key)) => {
                    let perm = ctx.galois_permutation(*g);
                    let (mut u0, u1) = self.key_products(dec.as_ref().unwrap(), key, Some(&perm));
                    u0.add_assign(&lift(&ct.c0, Some(&perm)), &ext_moduli);
                    (u0, u1)
                }
            })
            .collect();
        let pt_scale = self.factor_scale(ct);
        let encoded: Vec<RnsPoly> = masks
            .iter()
            .map(|m| Ok(ctx.to_ntt(&ctx.encoder().encode(m, pt_scale)?, (0..=l).chain(std::iter::once(sp)))))
            .collect::<Result<_>>()?;

        // products are below 2^122; seven of them plus a residue stay below 2^125
        const BATCH: usize = 7;
        outputs
            .iter()
            .map(|pairs| {
                if pairs.is_empty() {
                    return Err(Error::Params("empty rotation sum".into()));
                }
                let mut acc = vec![vec![0u128; n]; 2 * (l + 2)];
                for (b, chunk) in pairs.chunks(BATCH).enumerate() {
                    if b > 0 {
                        for (t, a) in acc.iter_mut().enumerate() {
                            let q = &ext_moduli[t % (l + 2)];
                            a.iter_mut().for_each(|x| *x = q.reduce_u128(*x) as u128);
                        }
                    }
                    for &(i, m) in chunk {
                        let (r0, r1) = &rotated[i];
                        let pt = &encoded[m];
                        for t in 0..l + 2 {
                            let p = &pt.limbs[t];
                            for (x, (&a, &b)) in acc[t].iter_mut().zip(r0.limbs[t].iter().zip(p)) {
                                *x += a as u128 * b as u128;
                            }
                            for (x, (&a, &b)) in acc[l + 2 + t].iter_mut().zip(r1.limbs[t].iter().zip(p)) {
                                *x += a as u128 * b as u128;
                            }
                        }
                    }
                }
                let mut reduced: Vec<Vec<u64>> = acc
                    .into_iter()
                    .enumerate()
                    .map(|(t, a)| {
                        let q = &ext_moduli[t % (l + 2)];
                        a.into_iter().map(|x| q.reduce_u128(x)).collect()
                    })
                    .collect();
                let mut c1 = reduced.split_off(l + 2);
                let s0 = reduced.pop().expect("special limb");
                let s1 = c1.pop().expect("special limb");
                let mut out = Ciphertext {
                    c0: self.mod_down(RnsPoly { limbs: reduced }, s0),
                    c1: self.mod_down(RnsPoly { limbs: c1 }, s1),
                    level: l,
                    scale: ct.scale * pt_scale,
                    noise_hint: ct.noise_hint + (pairs.len() as f64).log2() + 1.0,
                };
                self.rescale_in_place(&mut out)?;
                Ok(out)
            })
            .collect()
    }

    /// Whether a dedicated key exists for a left rotation by `step`.
    pub fn has_rotation_key(&self, step: i64) -> bool {
        step.rem_euclid(self.ctx.slots() as i64) == 0 || self.key_for(step).is_some()
    }

    /// Whether a left rotation by `step` can be evaluated with the loaded keys.
    pub fn can_rotate(&self, step: i64) -> bool {
        rotation_terms(step, self.ctx.slots())
            .iter()
            .all(|&t| self.key_for(t).is_some())
    }
}
