//! Core kernels for studying how magnitude pruning reshapes small vision models.
//!
//! Everything in this crate is a pure function of its inputs: synthetic shape
//! datasets with exact masks and boxes, two tiny differentiable backbones with
//! hand-written backward passes, global magnitude pruning with learning-rate
//! rewinding, gradient-based saliency methods, relevance metrics (mass and
//! rank accuracy), seed-expansion object localization, and distortion-accuracy
//! evaluation. IO, file formats, and orchestration live in the companion CLI
//! crate.
//!
//! The crate is `no_std`-compatible (`alloc` required); the default `std`
//! feature and the optional `parallel` feature (deterministic rayon maps) are
//! conveniences for hosted builds. All transcendental math goes through
//! `libm`, so results are bit-identical across feature combinations.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod alignment;
pub mod attribution;
pub mod dataset;
pub mod error;
pub mod lost;
pub mod metrics;
pub mod nn;
pub mod parallel;
pub mod pruning;
pub mod rng;
pub mod scalar;
pub mod sweetspot;
pub mod tensor;

pub use error::{CoreError, Result};
pub use tensor::Tensor;
