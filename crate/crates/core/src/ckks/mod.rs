//! Leveled RNS-CKKS over `Z[X]/(X^N + 1)`.

pub mod arith;
pub mod context;
pub mod encoding;
pub mod eval;
pub mod keys;
pub mod ntt;
pub mod params;
pub mod poly;
pub mod serial;

pub use context::{Ciphertext, CkksContext, Plaintext};
pub use eval::Evaluator;
pub use keys::{
    decrypt, decrypt_values, encrypt, encrypt_trivial, encrypt_values, keygen, keygen_with_steps,
    EvalKeySet, PublicKey, SecretKey,
};
pub use params::SchemeParams;
