//! Negacyclic number-theoretic transform over Z_q[X]/(X^N + 1).
//!
//! Forward transform is Cooley-Tukey with bit-reversed output, inverse is
//! Gentleman-Sande taking bit-reversed input. Twiddles carry Shoup companions.

use super::arith::{primitive_root_2n, Modulus};

#[derive(Clone, Debug)]
pub struct NttTable {
    n: usize,
    q: Modulus,
    psi_rev: Vec<u64>,
    psi_rev_shoup: Vec<u64>,
    psi_inv_rev: Vec<u64>,
    psi_inv_rev_shoup: Vec<u64>,
    n_inv: u64,
    n_inv_shoup: u64,
}

pub(crate) fn bit_reverse(mut x: usize, bits: u32) -> usize {
    let mut r = 0;
    for _ in 0..bits {
        r = (r << 1) | (x & 1);
        x >>= 1;
    }
    r
}

impl NttTable {
    /// Returns `None` when `q` has no primitive `2n`-th root of unity.
    pub fn new(q: Modulus, n: usize) -> Option<Self> {
        assert!(n.is_power_of_two() && n >= 2);
        let psi = primitive_root_2n(&q, 2 * n as u64)?;
        let psi_inv = q.inv(psi);
        let bits = n.trailing_zeros();
        let mut psi_rev = vec![0u64; n];
        let mut psi_inv_rev = vec![0u64; n];
        let (mut p, mut pi) = (1u64, 1u64);
        for i in 0..n {
            let r = bit_reverse(i, bits);
            psi_rev[r] = p;
            psi_inv_rev[r] = pi;
            p = q.mul(p, psi);
            pi = q.mul(pi, psi_inv);
        }
        let psi_rev_shoup = psi_rev.iter().map(|&w| q.shoup(w)).collect();
        let psi_inv_rev_shoup = psi_inv_rev.iter().map(|&w| q.shoup(w)).collect();
        let n_inv = q.inv(n as u64);
        Some(Self {
            n,
            q,
            psi_rev,
            psi_rev_shoup,
            psi_inv_rev,
            psi_inv_rev_shoup,
            n_inv,
            n_inv_shoup: q.shoup(n_inv),
        })
    }

    pub fn modulus(&self) -> &Modulus {
        &self.q
    }

    pub fn degree(&self) -> usize {
        self.n
    }

    /// Forward negacyclic transform, output in bit-reversed order.
    /// Butterflies run lazily in `[0, 4q)` and are reduced once at the end.
    pub fn forward(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.n);
        let q = self.q.value();
        let two_q = 2 * q;
        #[inline(always)]
        fn butterfly(x: &mut u64, y: &mut u64, w: u64, ws: u64, q: u64, two_q: u64) {
            let u = if *x >= two_q { *x - two_q } else { *x };
            let qhat = ((*y as u128 * ws as u128) >> 64) as u64;
            let v = y.wrapping_mul(w).wrapping_sub(qhat.wrapping_mul(q));
            *x = u + v;
            *y = u + two_q - v;
        }
        let mut t = self.n;
        let mut m = 1;
        while t > 1 {
            t >>= 1;
            let (w_tab, ws_tab) = (&self.psi_rev[m..2 * m], &self.psi_rev_shoup[m..2 * m]);
            for ((chunk, &w), &ws) in a.chunks_exact_mut(2 * t).zip(w_tab).zip(ws_tab) {
                let (lo, hi) = chunk.split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    butterfly(x, y, w, ws, q, two_q);
                }
            }
            m <<= 1;
        }
        // branch-free: outputs are uniformly spread, so a branch mispredicts half the time
        for x in a.iter_mut() {
            let r = (*x).min(x.wrapping_sub(two_q));
            *x = r.min(r.wrapping_sub(q));
        }
    }

    /// Inverse of [`NttTable::forward`], including the `1/n` factor.
    pub fn inverse(&self, a: &mut [u64]) {
        assert_eq!(a.len(), self.n);
        let q = self.q.value();
        let two_q = 2 * q;
        let mut t = 1;
        let mut m = self.n;
        while m > 1 {
            let h = m >> 1;
            let (w_tab, ws_tab) = (&self.psi_inv_rev[h..m], &self.psi_inv_rev_shoup[h..m]);
            for (i, chunk) in a.chunks_exact_mut(2 * t).enumerate() {
                let (w, ws) = (w_tab[i], ws_tab[i]);
                let (lo, hi) = chunk.split_at_mut(t);
                for (x, y) in lo.iter_mut().zip(hi.iter_mut()) {
                    let u = *x;
                    let v = *y;
                    let mut s = u + v;
                    if s >= two_q {
                        s -= two_q;
                    }
                    *x = s;
                    let d = u + two_q - v;
                    let qhat = ((d as u128 * ws as u128) >> 64) as u64;
                    *y = d.wrapping_mul(w).wrapping_sub(qhat.wrapping_mul(q));
                }
            }
            t <<= 1;
            m = h;
        }
        let qm = &self.q;
        for x in a.iter_mut() {
            *x = qm.mul_shoup(*x, self.n_inv, self.n_inv_shoup);
        }
    }
}

/// Schoolbook negacyclic product, used as a test oracle.
#[cfg(test)]
pub(crate) fn negacyclic_schoolbook(a: &[u64], b: &[u64], q: &Modulus) -> Vec<u64> {
    let n = a.len();
    let mut out = vec![0u64; n];
    for i in 0..n {
        for j in 0..n {
            let p = q.mul(a[i], b[j]);
            let k = i + j;
            if k < n {
                out[k] = q.add(out[k], p);
            } else {
                out[k - n] = q.sub(out[k - n], p);
            }
        }
    }
    out
}
