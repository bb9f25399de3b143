use serde::{Deserialize, Serialize};

use super::plain::aexp_plain;
use crate::error::{Error, Result};

/// Goldschmidt truncation error the automatic iteration count aims for.
/// The closing Newton step squares it.
pub const INV_TARGET: f64 = 1e-2;

/// Knobs of the encrypted softmax approximation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxConfig {
    /// Largest logit magnitude the approximation is accurate for.
    pub domain_bound: f64,
    /// `r` in `(1 + x/2^r)^(2^r)`.
    pub exp_squarings: u32,
    pub inv_iterations: u32,
    /// Bounds on every softmax denominator, `(lb, ub)`.
    pub inv_range: (f64, f64),
    pub class_count: usize,
}

impl SoftmaxConfig {
    pub const DEFAULT_BOUND: f64 = 8.0;
    pub const DEFAULT_SQUARINGS: u32 = 12;

    /// Defaults for `k` classes.
    pub fn new(class_count: usize) -> Self {
        Self::derived(class_count, Self::DEFAULT_BOUND, Self::DEFAULT_SQUARINGS)
    }

    /// Derives the denominator range from `(k, B, r)` and picks the smallest
    /// iteration count that reaches [`INV_TARGET`] across it.
    pub fn derived(class_count: usize, domain_bound: f64, exp_squarings: u32) -> Self {
        let k = class_count as f64;
        let lb = k * aexp_plain(-domain_bound, exp_squarings);
        let ub = k * aexp_plain(domain_bound, exp_squarings);
        Self {
            domain_bound,
            exp_squarings,
            inv_iterations: inv_iterations_for(lb, ub, INV_TARGET),
            inv_range: (lb, ub),
            class_count,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lb, ub) = self.inv_range;
        let bad = |m: String| Err(Error::Config(m));
        if !(self.domain_bound > 0.0 && self.domain_bound.is_finite()) {
            return bad(format!("domain bound {} must be positive", self.domain_bound));
        }
        if self.class_count < 2 {
            return bad(format!("{} classes; softmax needs at least 2", self.class_count));
        }
        if self.exp_squarings == 0 || self.exp_squarings > 30 {
            return bad(format!("exp_squarings {} outside 1..=30", self.exp_squarings));
        }
        if self.domain_bound >= 2f64.powi(self.exp_squarings as i32) {
            return bad("domain bound must stay below 2^exp_squarings".into());
        }
        if self.inv_iterations == 0 || self.inv_iterations > 64 {
            return bad(format!("inv_iterations {} outside 1..=64", self.inv_iterations));
        }
        if !(lb > 0.0 && lb < ub && ub.is_finite()) {
            return bad(format!("inverse range ({lb}, {ub}) must satisfy 0 < lb < ub"));
        }
        let k = self.class_count as f64;
        let lo = k * aexp_plain(-self.domain_bound, self.exp_squarings);
        let hi = k * aexp_plain(self.domain_bound, self.exp_squarings);
        // a relative slack of 1e-9 absorbs float round-off from JSON round trips
        if lo < lb * (1.0 - 1e-9) || hi > ub * (1.0 + 1e-9) {
            return bad(format!(
                "denominators span [{lo}, {hi}], outside the inverse range ({lb}, {ub})"
            ));
        }
        Ok(())
    }

    /// Goldschmidt starting point. With `1/ub` the first error term lies in
    /// `[0, 1)`, so no iterate collapses towards zero at the top of the range.
    pub fn inv_seed(&self) -> f64 {
        1.0 / self.inv_range.1
    }

    /// Worst relative error of the reciprocal before rounding noise.
    pub fn inv_error_bound(&self) -> f64 {
        let (lb, ub) = self.inv_range;
        (1.0 - lb / ub).powf(2f64.powi(self.inv_iterations as i32 + 1))
    }

    pub fn exp_depth(&self) -> usize {
        self.exp_squarings as usize + 1
    }

    pub fn inv_depth(&self) -> usize {
        self.inv_iterations as usize + 3
    }

    /// Levels consumed by `asoftmax`: the exponential, the head mask, the
    /// reciprocal and the final product.
    pub fn softmax_depth(&self) -> usize {
        self.exp_depth() + 1 + self.inv_depth() + 1
    }
}

/// Smallest `n` with `(1 - lb/ub)^(2^n) <= target`.
pub fn inv_iterations_for(lb: f64, ub: f64, target: f64) -> u32 {
    if lb >= ub {
        return 1;
    }
    let ln_e0 = (-lb / ub).ln_1p();
    let need = target.ln() / ln_e0;
    (need.log2().ceil().max(0.0) as u32).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        for k in [2, 3, 10, 100] {
            let c = SoftmaxConfig::new(k);
            c.validate().unwrap();
            assert!(c.inv_error_bound() <= INV_TARGET * INV_TARGET);
        }
    }

    #[test]
    fn iteration_count_is_minimal() {
        let c = SoftmaxConfig::new(10);
        let fewer = SoftmaxConfig {
            inv_iterations: c.inv_iterations - 1,
            ..c.clone()
        };
        assert!(fewer.inv_error_bound() > INV_TARGET * INV_TARGET);
    }

    #[test]
    fn rejects_narrow_range() {
        let mut c = SoftmaxConfig::new(3);
        c.inv_range.1 /= 2.0;
        assert!(c.validate().is_err());
        let mut c = SoftmaxConfig::new(3);
        c.domain_bound = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_roundtrip_still_validates() {
        let c = SoftmaxConfig::new(7);
        let back: SoftmaxConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        back.validate().unwrap();
        assert_eq!(back.inv_iterations, c.inv_iterations);
    }
}
