//! Key generation, encryption and decryption.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::context::{Ciphertext, CkksContext, Plaintext};
use super::poly::{sample_gaussian, sample_ternary, sample_uniform, RnsPoly};
use crate::error::Result;

/// Ternary secret. Held by the client only.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    pub(crate) coeffs: Vec<i64>,
    /// Evaluation form over every chain prime and the special prime.
    pub(crate) poly: RnsPoly,
}

impl std::fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

impl SecretKey {
    pub fn coefficients(&self) -> &[i64] {
        &self.coeffs
    }
}

/// `(b, a)` with `b = -a·s + e` over the chain primes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    pub(crate) b: RnsPoly,
    pub(crate) a: RnsPoly,
}

/// Hybrid key-switching key: one `(b_i, a_i)` pair per chain prime, each over
/// the chain primes and the special prime.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeySwitchKey {
    pub(crate) digits: Vec<(RnsPoly, RnsPoly)>,
}

/// Relinearization key and rotation keys indexed by Galois element.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalKeySet {
    pub relin: KeySwitchKey,
    pub(crate) rotations: BTreeMap<u64, KeySwitchKey>,
}

impl EvalKeySet {
    pub fn rotation_key(&self, galois: u64) -> Option<&KeySwitchKey> {
        self.rotations.get(&galois)
    }

    pub fn remove_rotation(&mut self, galois: u64) -> Option<KeySwitchKey> {
        self.rotations.remove(&galois)
    }

    pub fn galois_elements(&self) -> impl Iterator<Item = u64> + '_ {
        self.rotations.keys().copied()
    }
}

/// Rotation steps with guaranteed keys: every power of two up to `slots/2`, both signs.
pub fn power_of_two_steps(slots: usize) -> Vec<i64> {
    let mut steps = Vec::new();
    let mut p = 1i64;
    while p <= slots as i64 / 2 {
        steps.push(p);
        steps.push(-p);
        p *= 2;
    }
    steps
}

pub fn generate_secret_key<R: Rng + ?Sized>(ctx: &CkksContext, rng: &mut R) -> SecretKey {
    let coeffs = sample_ternary(ctx.ring_degree(), rng);
    let poly = ctx.to_ntt(&coeffs, 0..ctx.moduli().len());
    SecretKey { coeffs, poly }
}

pub fn generate_public_key<R: Rng + ?Sized>(
    ctx: &CkksContext,
    sk: &SecretKey,
    rng: &mut R,
) -> PublicKey {
    let n = ctx.ring_degree();
    let level = ctx.max_level();
    let moduli = ctx.chain_moduli(level);
    let a = RnsPoly {
        limbs: moduli.iter().map(|q| sample_uniform(n, q, rng)).collect(),
    };
    let e = ctx.to_ntt(&sample_gaussian(n, ctx.params().error_stddev, rng), 0..=level);
    let mut s = sk.poly.clone();
    s.truncate(level + 1);
    let mut b = a.mul(&s, moduli);
    b.neg_assign(moduli);
    b.add_assign(&e, moduli);
    PublicKey { b, a }
}

/// Key switching from `target` (evaluation form over all primes) to `sk`.
fn generate_switch_key<R: Rng + ?Sized>(
    ctx: &CkksContext,
    sk: &SecretKey,
    target: &RnsPoly,
    rng: &mut R,
) -> KeySwitchKey {
    let n = ctx.ring_degree();
    let moduli = ctx.moduli();
    let digits = (0..=ctx.max_level())
        .map(|i| {
            let a = RnsPoly {
                limbs: moduli.iter().map(|q| sample_uniform(n, q, rng)).collect(),
            };
            let e = ctx.to_ntt(&sample_gaussian(n, ctx.params().error_stddev, rng), 0..moduli.len());
            let mut b = a.mul(&sk.poly, moduli);
            b.neg_assign(moduli);
            b.add_assign(&e, moduli);
            let qi = &moduli[i];
            let p = ctx.special_mod(i);
            for (x, t) in b.limbs[i].iter_mut().zip(&target.limbs[i]) {
                *x = qi.add(*x, qi.mul(p, *t));
            }
            (b, a)
        })
        .collect();
    KeySwitchKey { digits }
}

pub fn generate_relin_key<R: Rng + ?Sized>(
    ctx: &CkksContext,
    sk: &SecretKey,
    rng: &mut R,
) -> KeySwitchKey {
    let s2 = sk.poly.mul(&sk.poly, ctx.moduli());
    generate_switch_key(ctx, sk, &s2, rng)
}

pub fn generate_rotation_key<R: Rng + ?Sized>(
    ctx: &CkksContext,
    sk: &SecretKey,
    galois: u64,
    rng: &mut R,
) -> KeySwitchKey {
    let rotated = sk.poly.permute(&ctx.galois_permutation(galois));
    generate_switch_key(ctx, sk, &rotated, rng)
}

/// Evaluation keys for every power-of-two step plus any `extra_steps`.
pub fn generate_eval_keys<R: Rng + ?Sized>(
    ctx: &CkksContext,
    sk: &SecretKey,
    extra_steps: &[i64],
    rng: &mut R,
) -> EvalKeySet {
    let relin = generate_relin_key(ctx, sk, rng);
    let mut rotations = BTreeMap::new();
    let mut steps = power_of_two_steps(ctx.slots());
    steps.extend_from_slice(extra_steps);
    for step in steps {
        let g = ctx.galois_element(step);
        if g == 1 || rotations.contains_key(&g) {
            continue;
        }
        rotations.insert(g, generate_rotation_key(ctx, sk, g, rng));
    }
    EvalKeySet { relin, rotations }
}

/// Full deterministic key generation from a seed.
pub fn keygen(ctx: &CkksContext, seed: u64) -> (SecretKey, PublicKey, EvalKeySet) {
    keygen_with_steps(ctx, seed, &[])
}

pub fn keygen_with_steps(
    ctx: &CkksContext,
    seed: u64,
    extra_steps: &[i64],
) -> (SecretKey, PublicKey, EvalKeySet) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let sk = generate_secret_key(ctx, &mut rng);
    let pk = generate_public_key(ctx, &sk, &mut rng);
    let evk = generate_eval_keys(ctx, &sk, extra_steps, &mut rng);
    (sk, pk, evk)
}

pub(crate) fn fresh_noise_hint(ctx: &CkksContext) -> f64 {
    (6.0 * ctx.params().error_stddev * (ctx.ring_degree() as f64).sqrt()).log2()
}

pub fn encrypt<R: Rng + ?Sized>(
    ctx: &CkksContext,
    pk: &PublicKey,
    pt: &Plaintext,
    rng: &mut R,
) -> Ciphertext {
    let n = ctx.ring_degree();
    let level = pt.level;
    let moduli = ctx.chain_moduli(level);
    let sigma = ctx.params().error_stddev;
    let v = ctx.to_ntt(&sample_ternary(n, rng), 0..=level);
    let e0 = ctx.to_ntt(&sample_gaussian(n, sigma, rng), 0..=level);
    let e1 = ctx.to_ntt(&sample_gaussian(n, sigma, rng), 0..=level);
    let mut b = pk.b.clone();
    b.truncate(level + 1);
    let mut a = pk.a.clone();
    a.truncate(level + 1);
    let mut c0 = v.mul(&b, moduli);
    c0.add_assign(&e0, moduli);
    c0.add_assign(&pt.poly, moduli);
    let mut c1 = v.mul(&a, moduli);
    c1.add_assign(&e1, moduli);
    Ciphertext {
        c0,
        c1,
        level,
        scale: pt.scale,
        noise_hint: fresh_noise_hint(ctx),
    }
}

/// Encodes at the canonical scale of `level` and encrypts.
pub fn encrypt_values<R: Rng + ?Sized>(
    ctx: &CkksContext,
    pk: &PublicKey,
    values: &[f64],
    level: usize,
    rng: &mut R,
) -> Result<Ciphertext> {
    let pt = ctx.encode(values, level, ctx.canonical_scale(level))?;
    Ok(encrypt(ctx, pk, &pt, rng))
}

/// Trivial encryption `(m, 0)`; carries no secrecy. Used for public constants
/// such as an all-zero initial model.
pub fn encrypt_trivial(ctx: &CkksContext, pt: &Plaintext) -> Ciphertext {
    Ciphertext {
        c0: pt.poly.clone(),
        c1: RnsPoly::zero(ctx.ring_degree(), pt.level + 1),
        level: pt.level,
        scale: pt.scale,
        noise_hint: 0.0,
    }
}

pub fn decrypt(ctx: &CkksContext, sk: &SecretKey, ct: &Ciphertext) -> Plaintext {
    let moduli = ctx.chain_moduli(ct.level);
    let mut s = sk.poly.clone();
    s.truncate(ct.level + 1);
    let mut m = ct.c1.mul(&s, moduli);
    m.add_assign(&ct.c0, moduli);
    Plaintext {
        poly: m,
        level: ct.level,
        scale: ct.scale,
        slot_count: ctx.slots(),
    }
}

/// Centered coefficients of `c0 + c1·s` computed from the base prime only.
pub fn decrypt_coefficients(ctx: &CkksContext, sk: &SecretKey, ct: &Ciphertext) -> Vec<i64> {
    let q0 = &ctx.moduli()[0];
    let mut limb: Vec<u64> = ct.c1.limbs[0]
        .iter()
        .zip(&sk.poly.limbs[0])
        .zip(&ct.c0.limbs[0])
        .map(|((c1, s), c0)| q0.add(q0.mul(*c1, *s), *c0))
        .collect();
    ctx.ntt_table(0).inverse(&mut limb);
    limb.iter().map(|&c| q0.center(c)).collect()
}

pub fn decrypt_values(ctx: &CkksContext, sk: &SecretKey, ct: &Ciphertext) -> Vec<f64> {
    ctx.encoder().decode(&decrypt_coefficients(ctx, sk, ct), ct.scale)
}
