//! Image containers and the sampling primitives used by every other module.

mod grid;
pub mod io;

pub use self::grid::{
    bilinear_taps, downsample_box, gradient, in_domain, psnr, upsample_bicubic, BilinearTaps,
    GradientField, Image, Mask,
};
