//! Single-image dehazing by gated fusion of derived inputs.
//!
//! A hazy image is turned into three enhanced versions ([`derive`]), a
//! multi-scale encoder/decoder predicts a confidence map for each ([`gfn`]),
//! and the maps blend the versions into the dehazed result. Training data is
//! synthesized with the atmospheric scattering model ([`hazesim`]), the
//! network is optimized with Adam ([`train`]) and scored with PSNR/SSIM
//! ([`metrics`]).

pub mod cli;
pub mod derive;
pub mod error;
pub mod gfn;
pub mod hazesim;
pub mod image;
pub mod io;
pub mod metrics;
pub mod scene;
pub mod tensor;
pub mod train;

pub use error::{CheckpointError, Error, Result};
pub use image::ImageRGB;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
struct ReadmeDoctests;
