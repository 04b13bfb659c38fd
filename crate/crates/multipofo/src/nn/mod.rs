//! Minimal dense-network engine with manual backpropagation.
//!
//! Only what the encoder/decoder/head topology needs: row-major matrices,
//! dense layers with ReLU or identity activations, summed-squared-error loss,
//! and Adam with bias correction. Training is single-threaded and fully
//! deterministic under a fixed seed.

mod adam;
mod layer;
mod loss;
mod matrix;

pub use adam::{Adam, AdamHyper};
pub use layer::{Activation, DenseLayer, GradientTape, LayerTape};
pub use loss::mse_loss;
pub use matrix::Matrix;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// RNG used for every weight initialization and data shuffle in a run.
///
/// ChaCha keeps the stream identical across platforms, so one seed pins the
/// whole training trajectory.
pub type TrainRng = ChaCha8Rng;

/// Builds the deterministic generator all randomness in a run derives from.
/// Seed 0 is an ordinary seed, not a sentinel.
pub fn seed_rng(seed: u64) -> TrainRng {
    ChaCha8Rng::seed_from_u64(seed)
}
