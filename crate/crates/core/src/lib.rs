//! Conditional diffusion downscaling of precipitation fields.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense tensors, hand-written forward/backward layers, AdamW
//!   and a finite-difference gradient checker.
//! - [`grids`]: precipitation/topography grids, the on-disk field and manifest
//!   formats, 8x pair construction and a synthetic orographic generator.
//! - [`preprocess`]: gamma correction and the mapping into the `[-1, 1]`
//!   working range of the model.
//! - [`diffusion`]: noise schedules, forward noising, the noise-prediction
//!   loss, ancestral sampling and bias-aware guided sampling.
//! - [`denoiser`]: the conditional U-Net noise predictor and the SRCNN
//!   baseline.
//! - [`evalcli`]: metrics, training/evaluation orchestration, checkpoints,
//!   run configuration and the command-line surface.

pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod evalcli;
pub mod grids;
pub mod numerics;
pub mod preprocess;
pub mod rng;

pub use error::{Error, Result};
