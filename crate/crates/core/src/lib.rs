//! Competitive training dynamics of circular representations in
//! modular-addition networks.
//!
//! The crate trains small embedding + MLP models on `a + b mod p`, decomposes
//! their embeddings into Fourier-frequency circles, measures which circles
//! survive training, and fits linear (and quadratic) ODEs to the per-frequency
//! signal trajectories.
//!
//! Modules:
//! - [`modmlp`]: the model, its hand-derived gradients, AdamW and the training loop.
//! - [`spectral`]: exact DFT of embeddings, signals, circle projections and surgery.
//! - [`fitness`]: survival detection, fitness measures and their statistics.
//! - [`dynamics`]: ODE system identification, matrix exponential and integration.
//! - [`harness`]: seeded multi-trial experiment protocols.

pub mod dynamics;
pub mod error;
pub mod fitness;
pub mod harness;
pub mod linalg;
pub mod modmlp;
pub mod par;
pub mod rng;
pub mod spectral;

pub use error::{Error, Result};
