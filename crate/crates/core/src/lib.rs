//! Multi-contrast MRI reconstruction at desk scale.
//!
//! The crate covers the full experimental loop for jointly learning a
//! k-space under-sampling pattern and a reconstruction network:
//!
//! - [`grid`] / [`metrics`] / [`filter`] — complex grids, the centered
//!   unitary FFT pair, PSNR/SSIM/RMSE and Gaussian smoothing;
//! - [`autodiff`] / [`nn`] — a small `f64` reverse-mode tape with conv,
//!   FFT, and warp primitives plus Adam and parameter storage;
//! - [`sampling`] — fixed and learnable under-sampling masks (continuous
//!   relaxation, binarization, mask application);
//! - [`diffusion`] — a conditional denoising diffusion model that
//!   synthesizes the target contrast and yields the frequency error prior;
//! - [`unfolding`] — the unrolled inertial proximal-gradient reconstruction
//!   network with its classical verification mode;
//! - [`loss`] / [`training`] — the combined frequency-domain loss, joint
//!   mask/network optimization, fine-tuning, and evaluation;
//! - [`data`] — synthetic paired-contrast phantoms, raw-volume ingestion,
//!   and subject-level dataset splits;
//! - [`gridio`] — portable binary grid/checkpoint files and PNG export.

pub mod autodiff;
pub mod error;
pub mod filter;
pub mod grid;
pub mod metrics;
pub mod nn;
pub mod sampling;

pub use error::{Error, Result};
