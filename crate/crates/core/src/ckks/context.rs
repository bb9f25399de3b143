//! Precomputed tables shared by every CKKS operation.

use std::collections::HashMap;

use super::arith::Modulus;
use super::encoding::SlotEncoder;
use super::ntt::NttTable;
use super::params::SchemeParams;
use super::poly::{reduce_signed, RnsPoly};
use crate::error::{Error, Result};

/// An encoded message in evaluation form over `q_0..=q_level`.
#[derive(Clone, Debug)]
pub struct Plaintext {
    pub(crate) poly: RnsPoly,
    pub level: usize,
    pub scale: f64,
    pub slot_count: usize,
}

/// A degree-one ciphertext `(c0, c1)` decrypting to `c0 + c1·s`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ciphertext {
    pub(crate) c0: RnsPoly,
    pub(crate) c1: RnsPoly,
    pub level: usize,
    pub scale: f64,
    /// Rough log2 of the noise magnitude; informational only.
    pub noise_hint: f64,
}

impl Ciphertext {
    pub fn c0(&self) -> &RnsPoly {
        &self.c0
    }

    pub fn c1(&self) -> &RnsPoly {
        &self.c1
    }
}

pub struct CkksContext {
    params: SchemeParams,
    digest: [u8; 32],
    /// Chain primes followed by the special prime.
    moduli: Vec<Modulus>,
    ntt: Vec<NttTable>,
    encoder: SlotEncoder,
    canonical_scales: Vec<f64>,
    /// `rescale_inv[l][i] = q_l^{-1} mod q_i` with its Shoup companion.
    rescale_inv: Vec<Vec<(u64, u64)>>,
    /// `P^{-1} mod q_i`.
    special_inv: Vec<(u64, u64)>,
    /// `P mod q_i`.
    special_mod: Vec<u64>,
    /// Odd exponent `e` such that NTT output `j` is the evaluation at `ψ^e`.
    slot_exponent: Vec<u32>,
    exponent_slot: Vec<u32>,
}

impl std::fmt::Debug for CkksContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CkksContext")
            .field("ring_degree", &self.params.ring_degree)
            .field("max_level", &self.params.max_level())
            .field("label", &self.params.security_label)
            .finish()
    }
}

impl CkksContext {
    pub fn new(params: SchemeParams) -> Result<Self> {
        params.validate()?;
        let n = params.ring_degree;
        let mut primes = params.modulus_chain.clone();
        primes.push(params.special_modulus);
        let moduli: Vec<Modulus> = primes.iter().map(|&q| Modulus::new(q)).collect();
        let ntt = moduli
            .iter()
            .map(|q| {
                NttTable::new(*q, n)
                    .ok_or_else(|| Error::Params(format!("prime {} is not NTT-compatible", q.value())))
            })
            .collect::<Result<Vec<_>>>()?;

        let max_level = params.max_level();
        let mut canonical_scales = vec![0.0; max_level + 1];
        canonical_scales[max_level] = params.default_scale;
        for l in (1..=max_level).rev() {
            let s = canonical_scales[l];
            canonical_scales[l - 1] = s * s / params.modulus_chain[l] as f64;
        }

        let rescale_inv = (0..=max_level)
            .map(|l| {
                (0..l)
                    .map(|i| {
                        let qi = &moduli[i];
                        let inv = qi.inv(qi.reduce(primes[l]));
                        (inv, qi.shoup(inv))
                    })
                    .collect()
            })
            .collect();
        let special_inv = (0..=max_level)
            .map(|i| {
                let qi = &moduli[i];
                let inv = qi.inv(qi.reduce(params.special_modulus));
                (inv, qi.shoup(inv))
            })
            .collect();
        let special_mod = (0..=max_level)
            .map(|i| moduli[i].reduce(params.special_modulus))
            .collect();

        // Locate each evaluation point by transforming X and taking discrete logs.
        let two_n = 2 * n;
        let q0 = &moduli[0];
        let mut x = vec![0u64; n];
        x[1] = 1;
        ntt[0].forward(&mut x);
        // Output 0 is itself a primitive 2N-th root; measuring every output
        // against it gives exponents that compose correctly under X -> X^g.
        let psi = x[0];
        let mut log = HashMap::with_capacity(n);
        let mut p = 1u64;
        for e in 0..two_n {
            if e % 2 == 1 {
                log.insert(p, e as u32);
            }
            p = q0.mul(p, psi);
        }
        let slot_exponent: Vec<u32> = x
            .iter()
            .map(|v| {
                log.get(v)
                    .copied()
                    .ok_or_else(|| Error::Params("NTT evaluation points are not odd powers".into()))
            })
            .collect::<Result<_>>()?;
        let mut exponent_slot = vec![u32::MAX; two_n];
        for (j, &e) in slot_exponent.iter().enumerate() {
            exponent_slot[e as usize] = j as u32;
        }

        Ok(Self {
            digest: params.digest(),
            encoder: SlotEncoder::new(n),
            params,
            moduli,
            ntt,
            canonical_scales,
            rescale_inv,
            special_inv,
            special_mod,
            slot_exponent,
            exponent_slot,
        })
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        Self::new(SchemeParams::preset(name)?)
    }

    pub fn params(&self) -> &SchemeParams {
        &self.params
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn ring_degree(&self) -> usize {
        self.params.ring_degree
    }

    pub fn slots(&self) -> usize {
        self.params.slots()
    }

    pub fn max_level(&self) -> usize {
        self.params.max_level()
    }

    /// Scale of a freshly encrypted ciphertext at `level`; products of two
    /// canonical ciphertexts at `l` rescale to exactly the canonical scale at `l-1`.
    pub fn canonical_scale(&self, level: usize) -> f64 {
        self.canonical_scales[level]
    }

    pub(crate) fn moduli(&self) -> &[Modulus] {
        &self.moduli
    }

    pub(crate) fn chain_moduli(&self, level: usize) -> &[Modulus] {
        &self.moduli[..=level]
    }

    pub(crate) fn special_index(&self) -> usize {
        self.moduli.len() - 1
    }

    pub(crate) fn ntt_table(&self, i: usize) -> &NttTable {
        &self.ntt[i]
    }

    pub(crate) fn rescale_inv(&self, level: usize, i: usize) -> (u64, u64) {
        self.rescale_inv[level][i]
    }

    pub(crate) fn special_inv(&self, i: usize) -> (u64, u64) {
        self.special_inv[i]
    }

    pub(crate) fn special_mod(&self, i: usize) -> u64 {
        self.special_mod[i]
    }

    pub fn encoder(&self) -> &SlotEncoder {
        &self.encoder
    }

    /// Converts signed coefficients to evaluation form over the given prime indices.
    pub(crate) fn to_ntt(&self, coeffs: &[i64], primes: impl Iterator<Item = usize>) -> RnsPoly {
        let limbs = primes
            .map(|i| {
                let mut v = reduce_signed(coeffs, &self.moduli[i]);
                self.ntt[i].forward(&mut v);
                v
            })
            .collect();
        RnsPoly { limbs }
    }

    /// Slot permutation realising `X -> X^g` on evaluation-form polynomials.
    pub(crate) fn galois_permutation(&self, galois: u64) -> Vec<u32> {
        let mask = 2 * self.ring_degree() as u64 - 1;
        self.slot_exponent
            .iter()
            .map(|&e| self.exponent_slot[(galois.wrapping_mul(e as u64) & mask) as usize])
            .collect()
    }

    /// Galois element rotating slots left by `step` (negative = right).
    pub fn galois_element(&self, step: i64) -> u64 {
        let slots = self.slots() as i64;
        let two_n = 2 * self.ring_degree() as u64;
        let k = step.rem_euclid(slots) as u64;
        let mut g = 1u64;
        let mut base = 5u64;
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                g = g * base % two_n;
            }
            base = base * base % two_n;
            e >>= 1;
        }
        g
    }

    pub fn encode(&self, values: &[f64], level: usize, scale: f64) -> Result<Plaintext> {
        if level > self.max_level() {
            return Err(Error::Params(format!(
                "level {level} exceeds max level {}",
                self.max_level()
            )));
        }
        let coeffs = self.encoder.encode(values, scale)?;
        Ok(Plaintext {
            poly: self.to_ntt(&coeffs, 0..=level),
            level,
            scale,
            slot_count: values.len(),
        })
    }

    /// Decodes a plaintext from its base limb; valid while the message
    /// coefficients stay below `q_0 / 2`.
    pub fn decode(&self, pt: &Plaintext) -> Vec<f64> {
        let coeffs = self.base_coefficients(&pt.poly);
        self.encoder.decode(&coeffs, pt.scale)
    }

    pub(crate) fn base_coefficients(&self, poly: &RnsPoly) -> Vec<i64> {
        let mut limb = poly.limbs[0].clone();
        self.ntt[0].inverse(&mut limb);
        let q0 = &self.moduli[0];
        limb.iter().map(|&c| q0.center(c)).collect()
    }
}
