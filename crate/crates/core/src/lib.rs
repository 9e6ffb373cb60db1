//! Desk-scale conditional diffusion lab: a toy DDPM whose training target is
//! fused with a weighted neighbor prediction (product-of-Gaussians style),
//! plus the supporting pieces — a minimal autodiff engine, isotropic Gaussian
//! algebra, a cosine-kNN neighbor bank, a density VAE for inverse-density
//! weights, synthetic imbalanced datasets, and recall/Fréchet metrics.

pub mod config;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gaussian;
pub mod gradcheck;
pub mod loss;
pub mod metrics;
pub mod neighbors;
pub mod nn;
pub mod optim;
pub mod sampler;
pub mod schedule;
pub mod seeds;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vae;

pub use error::{Error, Result};
