//! Word-sized modular arithmetic for NTT-friendly primes below 2^61.

/// A prime modulus with a precomputed Barrett constant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modulus {
    value: u64,
    /// floor(2^128 / q)
    ratio: u128,
}

impl Modulus {
    pub fn new(value: u64) -> Self {
        assert!(value > 2 && value < (1 << 61), "modulus out of range: {value}");
        Self {
            value,
            ratio: u128::MAX / value as u128,
        }
    }

    #[inline(always)]
    pub fn value(&self) -> u64 {
        self.value
    }

    /// Reduces `x < 2^125` modulo q.
    #[inline(always)]
    pub fn reduce_u128(&self, x: u128) -> u64 {
        let x0 = x as u64;
        let x1 = (x >> 64) as u64;
        let r0 = self.ratio as u64;
        let r1 = (self.ratio >> 64) as u64;
        let carry = (x0 as u128 * r0 as u128) >> 64;
        let mid = x1 as u128 * r0 as u128 + x0 as u128 * r1 as u128 + carry;
        let qhat = (x1 as u128 * r1 as u128 + (mid >> 64)) as u64;
        // qhat undershoots floor(x / q) by at most 2
        let r = x0.wrapping_sub(qhat.wrapping_mul(self.value));
        let r = r.min(r.wrapping_sub(self.value));
        r.min(r.wrapping_sub(self.value))
    }

    #[inline(always)]
    pub fn reduce(&self, x: u64) -> u64 {
        if x < self.value {
            x
        } else {
            self.reduce_u128(x as u128)
        }
    }

    /// Maps a signed integer to its residue.
    #[inline(always)]
    pub fn reduce_i64(&self, x: i64) -> u64 {
        // branch-free: lifted residues have random sign and magnitude
        let r = self.reduce_u128(x.unsigned_abs() as u128);
        let neg = ((x >> 63) as u64) & (self.value - r);
        let v = neg | (r & !((x >> 63) as u64));
        v.min(v.wrapping_sub(self.value))
    }

    #[inline(always)]
    pub fn add(&self, a: u64, b: u64) -> u64 {
        let s = a + b;
        s.min(s.wrapping_sub(self.value))
    }

    #[inline(always)]
    pub fn sub(&self, a: u64, b: u64) -> u64 {
        let d = a.wrapping_sub(b);
        d.min(d.wrapping_add(self.value))
    }

    #[inline(always)]
    pub fn neg(&self, a: u64) -> u64 {
        if a == 0 {
            0
        } else {
            self.value - a
        }
    }

    #[inline(always)]
    pub fn mul(&self, a: u64, b: u64) -> u64 {
        self.reduce_u128(a as u128 * b as u128)
    }

    /// Shoup companion of a fixed multiplicand `w < q`.
    #[inline(always)]
    pub fn shoup(&self, w: u64) -> u64 {
        (((w as u128) << 64) / self.value as u128) as u64
    }

    /// `a * w mod q` given `w_shoup = self.shoup(w)`.
    #[inline(always)]
    pub fn mul_shoup(&self, a: u64, w: u64, w_shoup: u64) -> u64 {
        let qhat = ((a as u128 * w_shoup as u128) >> 64) as u64;
        let r = a.wrapping_mul(w).wrapping_sub(qhat.wrapping_mul(self.value));
        r.min(r.wrapping_sub(self.value))
    }

    pub fn pow(&self, mut base: u64, mut exp: u64) -> u64 {
        let mut acc = 1u64;
        base = self.reduce(base);
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, base);
            }
            base = self.mul(base, base);
            exp >>= 1;
        }
        acc
    }

    /// Inverse by Fermat's little theorem; q must be prime.
    pub fn inv(&self, a: u64) -> u64 {
        debug_assert!(!a.is_multiple_of(self.value));
        self.pow(a, self.value - 2)
    }

    /// Centered representative of a residue, in (-q/2, q/2].
    #[inline(always)]
    pub fn center(&self, a: u64) -> i64 {
        let wrap = ((a > self.value / 2) as u64).wrapping_neg() & self.value;
        a as i64 - wrap as i64
    }
}

fn mulmod_slow(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn powmod_slow(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mulmod_slow(acc, b, m);
        }
        b = mulmod_slow(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    'outer: for a in BASES {
        let mut x = powmod_slow(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mulmod_slow(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// Primes `q ≡ 1 (mod 2n)` closest to `target`, alternating above and below,
/// skipping anything in `exclude`. Returns the nearest admissible prime.
pub fn nearest_ntt_prime(target: f64, two_n: u64, max_bits: u32, exclude: &[u64]) -> Option<u64> {
    let limit = 1u64 << max_bits;
    let center = (target / two_n as f64).round() as u64;
    for delta in 0..(1u64 << 22) {
        let cands = [center.checked_add(delta), center.checked_sub(delta)];
        let mut best: Option<u64> = None;
        for k in cands.into_iter().flatten() {
            let q = match k.checked_mul(two_n).and_then(|v| v.checked_add(1)) {
                Some(q) => q,
                None => continue,
            };
            if q < limit && q > 2 && !exclude.contains(&q) && is_prime(q) {
                best = match best {
                    Some(b) if (b as f64 - target).abs() <= (q as f64 - target).abs() => Some(b),
                    _ => Some(q),
                };
            }
        }
        if best.is_some() {
            return best;
        }
    }
    None
}

/// Largest prime `q ≡ 1 (mod 2n)` strictly below `2^bits`, skipping `exclude`.
pub fn largest_ntt_prime(bits: u32, two_n: u64, exclude: &[u64]) -> Option<u64> {
    let mut k = ((1u64 << bits) - 1) / two_n;
    while k > 0 {
        let q = k * two_n + 1;
        if q < (1u64 << bits) && !exclude.contains(&q) && is_prime(q) {
            return Some(q);
        }
        k -= 1;
    }
    None
}

/// A primitive `2n`-th root of unity modulo a prime `q ≡ 1 (mod 2n)`.
pub fn primitive_root_2n(q: &Modulus, two_n: u64) -> Option<u64> {
    let qv = q.value();
    if !(qv - 1).is_multiple_of(two_n) {
        return None;
    }
    let cofactor = (qv - 1) / two_n;
    (2..qv.min(1 << 20))
        .map(|x| q.pow(x, cofactor))
        .find(|&psi| q.pow(psi, two_n / 2) == qv - 1)
}
