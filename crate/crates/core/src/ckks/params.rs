//! Scheme parameters, named presets and their digest.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::arith::{is_prime, largest_ntt_prime, nearest_ntt_prime};
use crate::error::{Error, Result};

/// Parameters of the leveled RNS-CKKS scheme.
///
/// `modulus_chain[0]` is the base prime that stays after every rescale;
/// `modulus_chain[1..]` are dropped one per multiplication, last first.
/// `special_modulus` is only used inside key switching.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub ring_degree: usize,
    pub modulus_chain: Vec<u64>,
    pub special_modulus: u64,
    pub default_scale: f64,
    pub security_label: String,
    pub error_stddev: f64,
}

pub const PRESET_NAMES: [&str; 3] = ["desk", "fgb-like", "toy"];

impl SchemeParams {
    /// Builds a chain with one base prime, `levels` scaling primes chosen so
    /// that the canonical scale stays pinned near `2^scale_bits` at every
    /// level, and one special prime.
    pub fn generate(
        label: &str,
        log_degree: u32,
        base_bits: u32,
        levels: usize,
        scale_bits: u32,
        special_bits: u32,
    ) -> Result<Self> {
        let n = 1usize << log_degree;
        let two_n = 2 * n as u64;
        let fail = || Error::Params(format!("no NTT-friendly prime for ring degree {n}"));
        let base = largest_ntt_prime(base_bits, two_n, &[]).ok_or_else(fail)?;
        let special = largest_ntt_prime(special_bits, two_n, &[base]).ok_or_else(fail)?;
        let delta = 2f64.powi(scale_bits as i32);
        let mut used = vec![base, special];
        let mut top_down = Vec::with_capacity(levels);
        let mut scale = delta;
        for _ in 0..levels {
            let q = nearest_ntt_prime(scale * scale / delta, two_n, scale_bits + 1, &used)
                .ok_or_else(fail)?;
            used.push(q);
            top_down.push(q);
            scale = scale * scale / q as f64;
        }
        let mut chain = vec![base];
        chain.extend(top_down.into_iter().rev());
        let params = Self {
            ring_degree: n,
            modulus_chain: chain,
            special_modulus: special,
            default_scale: delta,
            security_label: label.to_string(),
            error_stddev: 3.2,
        };
        params.validate()?;
        Ok(params)
    }

    /// Named presets. `desk` and `toy` make no security claim.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Self::generate("desk-insecure", 13, 60, 8, 40, 60),
            "fgb-like" => Self::generate("fgb-like-128", 16, 60, 8, 40, 60),
            "toy" => Self::generate("toy-insecure", 9, 60, 4, 40, 60),
            other => Err(Error::Params(format!(
                "unknown preset `{other}` (expected one of {})",
                PRESET_NAMES.join(", ")
            ))),
        }
    }

    pub fn max_level(&self) -> usize {
        self.modulus_chain.len() - 1
    }

    pub fn slots(&self) -> usize {
        self.ring_degree / 2
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ring_degree;
        if !n.is_power_of_two() || n < 8 {
            return Err(Error::Params(format!("ring degree {n} is not a power of two >= 8")));
        }
        if self.modulus_chain.is_empty() {
            return Err(Error::Params("empty modulus chain".into()));
        }
        let two_n = 2 * n as u64;
        let mut all = self.modulus_chain.clone();
        all.push(self.special_modulus);
        for (i, &q) in all.iter().enumerate() {
            if q >= 1 << 61 {
                return Err(Error::Params(format!("prime {q} exceeds 61 bits")));
            }
            if !is_prime(q) {
                return Err(Error::Params(format!("{q} is not prime")));
            }
            if (q - 1) % two_n != 0 {
                return Err(Error::Params(format!(
                    "prime {q} is not NTT-compatible: {q} mod {two_n} != 1"
                )));
            }
            if all[..i].contains(&q) {
                return Err(Error::Params(format!("prime {q} appears twice")));
            }
        }
        if !(self.default_scale > 1.0) || !self.default_scale.is_finite() {
            return Err(Error::Params("default scale must be finite and > 1".into()));
        }
        if self.modulus_chain[0] as f64 <= 2.0 * self.default_scale {
            return Err(Error::Params("base prime must exceed twice the scale".into()));
        }
        for &q in &self.modulus_chain[1..] {
            let ratio = q as f64 / self.default_scale;
            if !(0.5..2.0).contains(&ratio) {
                return Err(Error::Params(format!(
                    "scaling prime {q} is not within a factor 2 of the scale"
                )));
            }
        }
        if self.special_modulus < *self.modulus_chain.iter().max().unwrap() / 2 {
            return Err(Error::Params("special prime too small for key switching".into()));
        }
        if !(self.error_stddev > 0.0) {
            return Err(Error::Params("error stddev must be positive".into()));
        }
        Ok(())
    }

    /// Canonical byte encoding hashed into [`SchemeParams::digest`].
    fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.ring_degree as u64).to_le_bytes());
        out.extend_from_slice(&(self.modulus_chain.len() as u64).to_le_bytes());
        for q in &self.modulus_chain {
            out.extend_from_slice(&q.to_le_bytes());
        }
        out.extend_from_slice(&self.special_modulus.to_le_bytes());
        out.extend_from_slice(&self.default_scale.to_bits().to_le_bytes());
        out.extend_from_slice(&self.error_stddev.to_bits().to_le_bytes());
        out.extend_from_slice(&(self.security_label.len() as u64).to_le_bytes());
        out.extend_from_slice(self.security_label.as_bytes());
        out
    }

    /// SHA-256 of the canonical encoding; stamped on every serialized object.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"ciphertune-params-v1");
        h.update(self.canonical_bytes());
        let out = h.finalize();
        let mut d = [0u8; 32];
        d.copy_from_slice(&out);
        d
    }
}
