//! Encrypted fine-tuning of a softmax-regression head.
//!
//! The client extracts features, encrypts them under an RNS-CKKS key and
//! ships them to a cloud that trains with Nesterov-accelerated gradient
//! descent on ciphertexts only. The pieces:
//!
//! - [`ckks`]: the leveled homomorphic encryption scheme.
//! - [`linalg`]: matrices packed into ciphertext slots and the two encrypted
//!   matrix products the training step needs.
//! - [`approx`]: softmax and reciprocal approximations, NAG updates.
//! - [`protocol`]: the client/cloud message flow, transports and transcripts.
//! - [`io`]: file formats and the synthetic dataset generator.

pub mod approx;
pub mod ckks;
pub mod error;
pub mod io;
pub mod linalg;
pub mod protocol;
mod wire;

pub use ckks::{Ciphertext, CkksContext, Evaluator, Plaintext, SchemeParams};
pub use error::{Error, Result};
