//! Shared fixtures for the kernel benchmarks.

use std::sync::Arc;

use ciphertune::ckks::{keygen, CkksContext, Evaluator, PublicKey, SecretKey};
use ciphertune::linalg::{encrypt_matrix, EncMatrix, PlainMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub struct Fixture {
    pub ctx: Arc<CkksContext>,
    pub sk: SecretKey,
    pub pk: PublicKey,
    pub ev: Evaluator,
    pub rng: ChaCha20Rng,
}

impl Fixture {
    pub fn new(preset: &str, seed: u64) -> Self {
        let ctx = Arc::new(CkksContext::from_preset(preset).expect("known preset"));
        let (sk, pk, evk) = keygen(&ctx, seed);
        let ev = Evaluator::new(ctx.clone(), Arc::new(evk));
        Self { ctx, sk, pk, ev, rng: ChaCha20Rng::seed_from_u64(seed) }
    }

    /// Uniform entries in `[-bound, bound)`.
    pub fn random(&mut self, rows: usize, cols: usize, bound: f64) -> PlainMatrix {
        PlainMatrix::from_fn(rows, cols, |_, _| self.rng.random_range(-bound..bound))
    }

    pub fn encrypt(&mut self, m: &PlainMatrix, stride: usize, level: usize) -> EncMatrix {
        encrypt_matrix(&self.ctx, &self.pk, m, stride, level, &mut self.rng).expect("fits")
    }
}
