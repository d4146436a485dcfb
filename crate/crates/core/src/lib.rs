//! Class-imbalanced image classification with latent-prior GAN oversampling.
//!
//! The pipeline pretrains a supervised autoencoder, fits one Gaussian per
//! class to its latents, initialises a generator, discriminator and
//! classifier from the pretrained weights, and trains them adversarially.

pub mod advtrain;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nets;
pub mod rng;
pub mod slppl;

pub use error::{Error, Result};
