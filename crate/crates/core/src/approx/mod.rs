//! Softmax approximation and the NAG training step.
//!
//! Under encryption `e^x` is `(1 + x/2^r)^(2^r)` and `1/x` is a Goldschmidt
//! iteration, so logits must stay within `±domain_bound`. The cleartext
//! mirrors evaluate the same polynomials and serve as oracles.

pub mod config;
pub mod enc;
pub mod nag;
pub mod plain;

pub use config::{inv_iterations_for, SoftmaxConfig};
pub use enc::{aexp, ainv, asoftmax};
pub use nag::{gradient, nag_gamma, nag_lambda, nag_step, plain_nag_step, Batch, NagSchedule, NagState};
pub use plain::{aexp_plain, ainv_plain, asoftmax_plain, cross_entropy, softmax_rows, SoftmaxKind};
