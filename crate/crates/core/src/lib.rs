//! Noisy-label classification with meta-learned feature re-weighting.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense `f64` tensors and a tape-based
//!   reverse-mode differentiator.
//! - [`nets`]: MLP backbone, linear classifier, the feature advisor, the
//!   MW-Net example-weighting network, SGD/Adam and the LR schedule.
//! - [`metaloop`]: cross-entropy, MW-Net and MFRW iterations, the
//!   finite-difference hypergradient and the epoch driver.
//! - [`noise`]: Flip/Flip2/Flip3 transition matrices and label corruption.
//! - [`data`]: blobs, IDX files, clean meta split and batching.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod metaloop;
pub mod nets;
pub mod noise;
pub mod tensor;

pub use error::{Error, Result};

/// Derives an independent seed for a numbered stream from a base seed
/// (SplitMix64 finalizer).
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
