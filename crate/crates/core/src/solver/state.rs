use crate::capture::{CaptureGeometry, CaptureModel};
use crate::error::{Error, Result};
use crate::geometry::{se3_exp, se3_log, InverseDepthMap, Pose};
use crate::imaging::{Image, Mask};

/// Frames within `radius` of `t`, excluding `t`, in ascending order.
pub fn neighbors(t: usize, frames: usize, radius: usize) -> Vec<usize> {
    let lo = t.saturating_sub(radius);
    let hi = (t + radius).min(frames.saturating_sub(1));
    (lo..=hi).filter(|s| *s != t).collect()
}

/// Pose of the frame preceding `t`. The first frame extrapolates the motion
/// between frames 0 and 1 backwards at constant velocity.
pub fn previous_pose(poses: &[Pose], t: usize) -> Result<Pose> {
    if t > 0 {
        return Ok(poses[t - 1]);
    }
    match poses.get(1) {
        Some(next) => {
            let delta = se3_log(&next.compose(&poses[0].inverse()))?;
            Ok(se3_exp(&delta.scale(-1.0)).compose(&poses[0]))
        }
        None => Ok(poses[0]),
    }
}

/// The optimization variable: per-frame latent images, inverse-depth maps,
/// poses and visibility masks, together with the observations they explain.
#[derive(Clone, Debug)]
pub struct SequenceState {
    pub model: CaptureModel,
    /// Observed low-resolution frames `B_t`.
    pub observed: Vec<Image>,
    /// Latent high-resolution frames `I_t`.
    pub latent: Vec<Image>,
    pub depth: Vec<InverseDepthMap>,
    pub poses: Vec<Pose>,
    /// `visibility[t]` holds `(s, mask)` for every neighbor `s` of `t`; masks
    /// have the observed resolution.
    pub visibility: Vec<Vec<(usize, Mask)>>,
}

impl SequenceState {
    /// A state with every pixel visible.
    pub fn new(
        model: CaptureModel,
        observed: Vec<Image>,
        latent: Vec<Image>,
        depth: Vec<InverseDepthMap>,
        poses: Vec<Pose>,
        neighbor_radius: usize,
    ) -> Result<Self> {
        let t = observed.len();
        let (lw, lh) = (
            observed.first().map_or(0, Image::width),
            observed.first().map_or(0, Image::height),
        );
        let visibility = (0..t)
            .map(|f| {
                neighbors(f, t, neighbor_radius)
                    .into_iter()
                    .map(|s| (s, Mask::filled(lw, lh, true)))
                    .collect()
            })
            .collect();
        let state = SequenceState {
            model,
            observed,
            latent,
            depth,
            poses,
            visibility,
        };
        state.validate()?;
        Ok(state)
    }

    pub fn frames(&self) -> usize {
        self.observed.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let t = self.frames();
        if t == 0 {
            return Err(Error::InsufficientFrames { needed: 1, got: 0 });
        }
        if self.latent.len() != t || self.depth.len() != t || self.poses.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "{t} observations, {} latent images, {} depth maps, {} poses",
                self.latent.len(),
                self.depth.len(),
                self.poses.len()
            )));
        }
        let f = self.model.factor;
        let (lw, lh, ch) = (
            self.observed[0].width(),
            self.observed[0].height(),
            self.observed[0].channels(),
        );
        for i in 0..t {
            let b = &self.observed[i];
            let l = &self.latent[i];
            let d = &self.depth[i];
            if (b.width(), b.height(), b.channels()) != (lw, lh, ch)
                || (l.width(), l.height(), l.channels()) != (lw * f, lh * f, ch)
                || (d.width(), d.height()) != (lw * f, lh * f)
            {
                return Err(Error::DimensionMismatch(format!("frame {i} has inconsistent sizes")));
            }
        }
        for (i, masks) in self.visibility.iter().enumerate() {
            for (_, m) in masks {
                if (m.width, m.height) != (lw, lh) {
                    return Err(Error::DimensionMismatch(format!(
                        "visibility mask of frame {i} is not observation-sized"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn previous_pose(&self, t: usize) -> Result<Pose> {
        previous_pose(&self.poses, t)
    }

    /// Visibility of frame `t` pixels in frame `s`; `None` means fully visible.
    pub fn mask(&self, t: usize, s: usize) -> Option<&Mask> {
        self.visibility
            .get(t)?
            .iter()
            .find(|(n, _)| *n == s)
            .map(|(_, m)| m)
    }

    pub fn capture_geometry(&self, t: usize) -> Result<CaptureGeometry> {
        CaptureGeometry::new(&self.depth[t], &self.poses[t], &self.previous_pose(t)?, &self.model)
    }

    pub fn capture_geometries(&self) -> Result<Vec<CaptureGeometry>> {
        (0..self.frames()).map(|t| self.capture_geometry(t)).collect()
    }
}
