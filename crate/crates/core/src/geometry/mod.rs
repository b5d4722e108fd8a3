//! Rigid-body kinematics, pinhole projection and inter-camera warping.

mod camera;
pub mod posefile;
mod se3;

pub use camera::{
    warp_depth_map, warp_jacobians, warp_pixel, Intrinsics, InverseDepthMap, RelativeWarp,
    WarpJacobian, MIN_DEPTH,
};
pub use se3::{hat, interpolate_pose, se3_exp, se3_log, Pose, Twist};
