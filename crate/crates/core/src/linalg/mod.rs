//! Matrices packed into ciphertext slots and the encrypted products used by
//! the training step.

pub mod enc;
pub mod kernels;
pub mod layout;
pub mod matrix;

pub use enc::{
    decrypt_matrix, encrypt_matrix, ensure_level, ensure_levels, matrix_from_bytes, matrix_to_bytes,
    reencrypt, trivial_matrix, EncMatrix, LocalRefresher, NoRefresh, RefreshPurpose, Refresher,
};
pub use kernels::{
    mask_entries, mask_matrix, mat_add, mat_scale, mat_sub, matmul_abt, matmul_atb, segment_replicate,
    segment_sum, sum_segments, MATMUL_DEPTH,
};
pub use layout::TileLayout;
pub use matrix::PlainMatrix;
