//! Pretrain a variational autoencoder, transfer its decoder weights into a
//! GAN generator, then train the GAN adversarially — plus the evaluation
//! machinery (loss statistics, a classifier-based sample score, mixture mode
//! coverage) to compare the transferred and randomly initialized regimes.
//!
//! The crate is self-contained: tensors, reverse-mode autodiff, network
//! presets, Adam, data ingestion, and metrics all live here. Training runs at
//! `f32`; gradient checks and the closed-form oracles run at `f64`.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nn;
pub mod objectives;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Real;
pub use tensor::Tensor;
