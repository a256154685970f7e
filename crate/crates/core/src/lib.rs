//! Outlier-robust diffusion solvers for inverse problems.
//!
//! The crate is `no_std` and only needs `alloc`. It carries the numerical
//! pieces of the pipeline:
//!
//! - [`schedule`]: variance-preserving noise schedules and reverse time grids
//! - [`rng`]: seeded, platform-independent Gaussian streams
//! - [`operators`]: forward operators with apply, VJP and finite-difference JVP
//! - [`denoiser`]: the data-prediction interface and closed-form priors
//! - [`robust_loss`]: Huber loss, IRLS weights and the reweighted objective
//! - [`refine`]: explicit noise estimation and measurement refinement
//! - [`inner`]: Robust-GD and Robust-CG inner solvers
//! - [`sampler`]: the outer reverse-diffusion loop
//! - [`degrade`] and [`metrics`]: outlier corruption, PSNR and SSIM
//!
//! File formats, the external denoiser process and the CLI live in the `rds`
//! companion crate.
#![no_std]
#![deny(rust_2018_idioms)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod degrade;
pub mod denoiser;
mod error;
pub mod inner;
pub mod metrics;
pub mod operators;
pub mod refine;
pub mod rng;
pub mod robust_loss;
pub mod sampler;
pub mod schedule;
mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
