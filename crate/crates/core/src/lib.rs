//! Generation of truly ambiguous test inputs for grayscale image classifiers,
//! and the supervisor scores used to benchmark misbehaviour detectors on them.
//!
//! The crate is `no_std` (with `alloc`). Everything that touches files,
//! threads or the command line lives in the companion `ambiguess` crate.
//!
//! Layout:
//! - [`tensor`], [`rng`], [`tape`], [`nn`], [`adam`]: the small dense-network
//!   training core (64-bit floats, reverse-mode gradients, Adam).
//! - [`models`]: classifier / autoencoder / discriminator constructors and
//!   inference, including MC-Dropout sampling.
//! - [`raae`]: 2-class regularized adversarial autoencoders and the
//!   discriminator-derived probabilistic labels.
//! - [`sampler`]: confined latent space, anchor grid, gradient-weighted
//!   heterogeneous sampling.
//! - [`datasets`]: image/label sets, invalid/corrupted/adversarial families,
//!   mixed-ambiguous training sets.
//! - [`supervisors`]: the 16 supervisor scores, all oriented so that higher
//!   means more suspicious.
//! - [`metrics`]: Top-1/Top-2/Top-Pair accuracy, mean entropy, AUC-ROC.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod adam;
pub mod datasets;
mod error;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod raae;
pub mod rng;
pub mod sampler;
pub mod supervisors;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::SeededRng;
pub use tensor::Tensor;

/// Side length of the square grayscale images handled throughout.
pub const IMAGE_SIDE: usize = 28;
/// Number of pixels per image.
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
