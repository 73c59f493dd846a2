//! Forward model for quantitative lung ultrasound.
//!
//! The crate covers everything up to (and including) the conventional image:
//!
//! - [`phantom`]: procedural alveolar aeration maps, target-aeration
//!   derecruitment and layered chest-wall media.
//! - [`solver`]: 2D nonlinear full-wave FDTD on a staggered grid with
//!   relaxation-mechanism attenuation and absorbing layers.
//! - [`sequence`]: pulse synthesis, walking-aperture focused transmits and RF
//!   tensor assembly.
//! - [`beamform`]: delay-and-sum, Hilbert envelope, log compression and display
//!   interpolation.
//! - [`metrics`]: aeration error, NMSE, PSNR, SSIM, Dice and calibration error.
//! - [`io`]: the `PWT1` tensor container and PGM previews.

pub mod beamform;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod phantom;
pub mod rng;
pub mod sequence;
pub mod solver;

pub use error::{Error, Result};
pub use grid::Grid;
