//! RNS polynomials kept in evaluation (NTT) form, plus samplers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::arith::Modulus;

/// One residue vector per prime. Which primes is decided by the owner:
/// ciphertexts use `q_0..=q_level`, key material appends the special prime.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RnsPoly {
    pub(crate) limbs: Vec<Vec<u64>>,
}

impl RnsPoly {
    pub(crate) fn zero(n: usize, limbs: usize) -> Self {
        Self {
            limbs: vec![vec![0u64; n]; limbs],
        }
    }

    pub fn limb_count(&self) -> usize {
        self.limbs.len()
    }

    pub fn degree(&self) -> usize {
        self.limbs.first().map_or(0, Vec::len)
    }

    pub fn limb(&self, i: usize) -> &[u64] {
        &self.limbs[i]
    }

    pub(crate) fn truncate(&mut self, limbs: usize) {
        self.limbs.truncate(limbs);
    }

    pub(crate) fn add_assign(&mut self, other: &RnsPoly, moduli: &[Modulus]) {
        for ((a, b), q) in self.limbs.iter_mut().zip(&other.limbs).zip(moduli) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = q.add(*x, *y);
            }
        }
    }

    pub(crate) fn sub_assign(&mut self, other: &RnsPoly, moduli: &[Modulus]) {
        for ((a, b), q) in self.limbs.iter_mut().zip(&other.limbs).zip(moduli) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = q.sub(*x, *y);
            }
        }
    }

    pub(crate) fn neg_assign(&mut self, moduli: &[Modulus]) {
        for (a, q) in self.limbs.iter_mut().zip(moduli) {
            for x in a.iter_mut() {
                *x = q.neg(*x);
            }
        }
    }

    pub(crate) fn mul(&self, other: &RnsPoly, moduli: &[Modulus]) -> RnsPoly {
        let limbs = self
            .limbs
            .iter()
            .zip(&other.limbs)
            .zip(moduli)
            .map(|((a, b), q)| a.iter().zip(b).map(|(x, y)| q.mul(*x, *y)).collect())
            .collect();
        RnsPoly { limbs }
    }

    pub(crate) fn mul_assign(&mut self, other: &RnsPoly, moduli: &[Modulus]) {
        for ((a, b), q) in self.limbs.iter_mut().zip(&other.limbs).zip(moduli) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = q.mul(*x, *y);
            }
        }
    }

    /// Multiplies every coefficient by a signed integer constant.
    pub(crate) fn mul_integer_assign(&mut self, k: i128, moduli: &[Modulus]) {
        for (a, q) in self.limbs.iter_mut().zip(moduli) {
            let r = (k.rem_euclid(q.value() as i128)) as u64;
            let rs = q.shoup(r);
            for x in a.iter_mut() {
                *x = q.mul_shoup(*x, r, rs);
            }
        }
    }

    /// Adds the constant polynomial `k` (constant in every NTT slot).
    pub(crate) fn add_integer_assign(&mut self, k: i128, moduli: &[Modulus]) {
        for (a, q) in self.limbs.iter_mut().zip(moduli) {
            let r = (k.rem_euclid(q.value() as i128)) as u64;
            for x in a.iter_mut() {
                *x = q.add(*x, r);
            }
        }
    }

    /// Applies a slot permutation to every limb: `out[j] = in[perm[j]]`.
    pub(crate) fn permute(&self, perm: &[u32]) -> RnsPoly {
        let limbs = self
            .limbs
            .iter()
            .map(|a| perm.iter().map(|&p| a[p as usize]).collect())
            .collect();
        RnsPoly { limbs }
    }
}

/// Residue of a signed coefficient vector modulo `q`.
pub(crate) fn reduce_signed(coeffs: &[i64], q: &Modulus) -> Vec<u64> {
    coeffs.iter().map(|&c| q.reduce_i64(c)).collect()
}

pub(crate) fn sample_ternary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<i64> {
    (0..n).map(|_| rng.random_range(-1i64..=1)).collect()
}

pub(crate) fn sample_gaussian<R: Rng + ?Sized>(n: usize, stddev: f64, rng: &mut R) -> Vec<i64> {
    let normal = Normal::new(0.0, stddev).expect("positive stddev");
    (0..n)
        .map(|_| normal.sample(rng).round() as i64)
        .collect()
}

pub(crate) fn sample_uniform<R: Rng + ?Sized>(n: usize, q: &Modulus, rng: &mut R) -> Vec<u64> {
    (0..n).map(|_| rng.random_range(0..q.value())).collect()
}
