//! Cascaded conditional diffusion for synthetic ultrasound tongue video.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: f64 tensors, seeded Gaussian draws, symmetric eigen/sqrt, softmax.
//! - [`schedule`]: noise levels, step grids and denoiser preconditioning.
//! - [`conditioning`]: synthetic audio-like / text-like encoders and cross-attention fusion.
//! - [`denoiser`]: analytic posterior-mean oracles and the learned preconditioned network.
//! - [`sampler`]: stochastic second-order sampler and the two-stage cascade.
//! - [`training`]: denoising objective, Adam, checkpointed training loop.
//! - [`dataset`]: tongue-contour video synthesis, the UTIV clip format, manifests.
//! - [`metrics`]: RMSE, PSNR and Fréchet distance on pluggable features.
//! - [`config`]: the run configuration shared by the CLI and bindings.

// Negated float comparisons reject NaN on purpose; index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod conditioning;
pub mod config;
pub mod dataset;
pub mod denoiser;
pub mod error;
pub mod metrics;
pub mod numerics;
pub mod sampler;
pub mod schedule;
pub mod training;

pub use error::{Error, Result};
