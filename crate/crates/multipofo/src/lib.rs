//! Multi-timescale peak load forecasting.
//!
//! Load history at several temporal scales (daily, weekly, monthly, ...) is
//! zero-padded to a common length, tagged with a one-hot scale vector, and
//! fed through a shared MLP encoder. Training happens in two stages: the
//! encoder and a mirrored decoder are first trained on reconstruction, then
//! the encoder is frozen and a linear head learns to predict the maximum
//! load of the next period from the latent representation.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod model;
pub mod multiscale;
pub mod nn;
pub mod synth;
pub mod training;

pub use error::{Error, Result};
