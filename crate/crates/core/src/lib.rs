//! Joint estimation of camera poses, dense inverse-depth maps and sharp
//! super-resolved latent images from a blurred low-resolution image sequence.

pub mod capture;
pub mod cli;
pub mod energy;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod imaging;
pub mod linalg;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
