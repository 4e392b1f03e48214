//! Label-noise learning laboratory built around confidence-error sieving.
//!
//! The crate is organised bottom-up:
//!
//! - [`nn`]: a small dense network with exact manual backpropagation, SGD with
//!   momentum and a cosine learning-rate schedule.
//! - [`data`]: the [`Dataset`] type, Gaussian blob generation, splits, batching
//!   and CSV persistence.
//! - [`noise`]: symmetric, pairflip and instance-dependent label corruption.
//! - [`sieve`]: per-sample selection criteria (confidence error, likelihood
//!   ratio, small loss), the warm-up threshold schedule and the
//!   clean-plus-duplicates dataset rebuild.
//! - [`trainer`]: cross-entropy, CONFES, Co-teaching and CONFES-Co-teaching
//!   training loops with per-epoch histories.
//! - [`theory`]: finite-domain Tsybakov models for Monte-Carlo checks of the
//!   confidence-error probability-of-error bounds.
//! - [`metrics`]: sieve confusion matrices, histograms and confidence tracks.
//!
//! Every random quantity is drawn from an explicitly seeded ChaCha stream (see
//! [`rng`]), so a run is a pure function of its configuration and seed.

pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod noise;
pub mod rng;
pub mod sieve;
pub mod theory;
pub mod trainer;

pub use data::Dataset;
pub use error::{Error, Result};
pub use nn::{Network, OptimizerConfig};
pub use noise::{NoiseKind, NoiseSpec, TransitionMatrix};
pub use sieve::{SieveConfig, SieveReport};
pub use trainer::{Method, TrainConfig, TrainHistory};
