//! Canonical-embedding encoder: real slot vectors <-> integer coefficients.
//!
//! Slot `i` is the evaluation at `ζ^(5^i)` with `ζ = exp(iπ/N)`, so the
//! Galois map `X -> X^(5^k)` rotates slots left by `k`.

use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SlotEncoder {
    n: usize,
    slots: usize,
    m: usize,
    rot_group: Vec<usize>,
    ksi: Vec<Complex64>,
}

impl SlotEncoder {
    pub fn new(ring_degree: usize) -> Self {
        let n = ring_degree;
        let slots = n / 2;
        let m = 2 * n;
        let mut rot_group = Vec::with_capacity(slots);
        let mut g = 1usize;
        for _ in 0..slots {
            rot_group.push(g);
            g = g * 5 % m;
        }
        let ksi = (0..=m)
            .map(|j| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / m as f64))
            .collect();
        Self {
            n,
            slots,
            m,
            rot_group,
            ksi,
        }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    fn bit_reverse_in_place(vals: &mut [Complex64]) {
        let n = vals.len();
        let mut j = 0;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                vals.swap(i, j);
            }
        }
    }

    /// Slots -> coefficient-domain (complex) vector of half length.
    fn special_inverse_fft(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        let mut len = size;
        while len >= 1 {
            let lenh = len >> 1;
            let lenq = len << 2;
            let gap = self.m / lenq;
            let mut i = 0;
            while i < size {
                for j in 0..lenh {
                    let idx = (lenq - (self.rot_group[j] & (lenq - 1))) * gap;
                    let u = vals[i + j] + vals[i + j + lenh];
                    let v = (vals[i + j] - vals[i + j + lenh]) * self.ksi[idx];
                    vals[i + j] = u;
                    vals[i + j + lenh] = v;
                }
                i += len;
            }
            len >>= 1;
        }
        Self::bit_reverse_in_place(vals);
        let inv = 1.0 / size as f64;
        for v in vals.iter_mut() {
            *v *= inv;
        }
    }

    fn special_fft(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        Self::bit_reverse_in_place(vals);
        let mut len = 2;
        while len <= size {
            let lenh = len >> 1;
            let lenq = len << 2;
            let gap = self.m / lenq;
            let mut i = 0;
            while i < size {
                for j in 0..lenh {
                    let idx = (self.rot_group[j] & (lenq - 1)) * gap;
                    let u = vals[i + j];
                    let v = vals[i + j + lenh] * self.ksi[idx];
                    vals[i + j] = u + v;
                    vals[i + j + lenh] = u - v;
                }
                i += len;
            }
            len <<= 1;
        }
    }

    /// Encodes up to `slots` reals at `scale`; unused slots encode zero.
    pub fn encode(&self, values: &[f64], scale: f64) -> Result<Vec<i64>> {
        if values.len() > self.slots {
            return Err(Error::Capacity {
                len: values.len(),
                slots: self.slots,
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Params(format!("cannot encode non-finite value {v}")));
        }
        let mut vals = vec![Complex64::new(0.0, 0.0); self.slots];
        for (slot, &v) in vals.iter_mut().zip(values) {
            slot.re = v;
        }
        self.special_inverse_fft(&mut vals);
        let mut coeffs = vec![0i64; self.n];
        const LIMIT: f64 = (1u64 << 62) as f64;
        for (i, v) in vals.iter().enumerate() {
            let re = (v.re * scale).round();
            let im = (v.im * scale).round();
            if re.abs() >= LIMIT || im.abs() >= LIMIT {
                return Err(Error::Params(format!(
                    "encoded coefficient overflows 62 bits at scale {scale:e}"
                )));
            }
            coeffs[i] = re as i64;
            coeffs[i + self.slots] = im as i64;
        }
        Ok(coeffs)
    }

    /// Encodes a value replicated in every slot: the constant polynomial.
    pub fn encode_constant(value: f64, scale: f64) -> i128 {
        (value * scale).round() as i128
    }

    /// Decodes centered integer coefficients at `scale` into real slot values.
    pub fn decode(&self, coeffs: &[i64], scale: f64) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.n);
        let mut vals: Vec<Complex64> = (0..self.slots)
            .map(|i| Complex64::new(coeffs[i] as f64 / scale, coeffs[i + self.slots] as f64 / scale))
            .collect();
        self.special_fft(&mut vals);
        vals.into_iter().map(|v| v.re).collect()
    }
}
