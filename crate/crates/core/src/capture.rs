//! The capture operator: motion blur by integrating warped views along the
//! interpolated camera path, followed by box downsampling.
//!
//! For a frame with pose `P_t` and previous pose `P_s`, the exposure is
//! sampled at `M` poses `exp(alpha_m * log(P_t P_s^-1)) P_s`. Each sample
//! pose sees the frame's own inverse-depth map transported by forward
//! splatting. Every high-resolution pixel of every sample view is warped
//! into the camera whose image is being captured and read bilinearly; the
//! `M` reads are averaged and the result is box filtered by `factor`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{
    interpolate_pose, warp_depth_map, Intrinsics, InverseDepthMap, Pose, RelativeWarp,
};
use crate::imaging::{bilinear_taps, Image, Mask};
use crate::linalg::CsrMatrix;

/// Parameters of the capture process.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaptureModel {
    /// High-resolution intrinsics.
    pub intrinsics: Intrinsics,
    /// Number of exposure samples `M`.
    pub samples: usize,
    /// Shutter-open time over the inter-frame interval, in `(0, 1]`.
    pub exposure_fraction: f64,
    /// Downsampling factor between latent and observed images.
    pub factor: usize,
}

impl CaptureModel {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::invalid("capture samples must be at least 1"));
        }
        if self.factor == 0 {
            return Err(Error::invalid("downsample factor must be at least 1"));
        }
        if !(self.exposure_fraction > 0.0 && self.exposure_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "exposure fraction must lie in (0, 1], got {}",
                self.exposure_fraction
            )));
        }
        Ok(())
    }

    /// Intrinsics of the observed (low-resolution) grid.
    pub fn lr_intrinsics(&self) -> Intrinsics {
        self.intrinsics.downscaled(self.factor as f64)
    }

    pub fn with_samples(&self, samples: usize) -> CaptureModel {
        CaptureModel { samples, ..*self }
    }
}

/// Interpolation parameters `(tau_m - s) / (t - s)` of the `M` exposure samples
/// of a frame at time `t` whose previous frame is at `s`.
pub fn sample_times(model: &CaptureModel, t: f64, s: f64) -> Vec<f64> {
    assert!(t != s, "frame times must differ");
    let (tc, to) = (t, t - model.exposure_fraction * (t - s));
    let m_total = model.samples;
    (1..=m_total)
        .map(|m| {
            if m == m_total {
                return 1.0;
            }
            let tau = (m as f64 / m_total as f64) * (tc - to) + to;
            (tau - s) / (t - s)
        })
        .collect()
}

/// Exposure geometry of one frame: the sample poses and transported depth maps.
#[derive(Clone, Debug)]
pub struct CaptureGeometry {
    model: CaptureModel,
    width: usize,
    height: usize,
    sample_poses: Vec<Pose>,
    sample_depths: Vec<InverseDepthMap>,
}

impl CaptureGeometry {
    pub fn new(
        depth: &InverseDepthMap,
        pose_t: &Pose,
        pose_prev: &Pose,
        model: &CaptureModel,
    ) -> Result<Self> {
        model.validate()?;
        let (w, h) = (depth.width(), depth.height());
        if w % model.factor != 0 || h % model.factor != 0 {
            return Err(Error::NotDivisible {
                width: w,
                height: h,
                factor: model.factor,
            });
        }
        let mut sample_poses = Vec::with_capacity(model.samples);
        for alpha in sample_times(model, 1.0, 0.0) {
            sample_poses.push(interpolate_pose(pose_t, pose_prev, alpha)?);
        }
        let sample_depths = sample_poses
            .par_iter()
            .map(|p| warp_depth_map(depth, pose_t, p, &model.intrinsics))
            .collect();
        Ok(CaptureGeometry {
            model: *model,
            width: w,
            height: h,
            sample_poses,
            sample_depths,
        })
    }

    pub fn model(&self) -> &CaptureModel {
        &self.model
    }

    pub fn hr_size(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn lr_size(&self) -> (usize, usize) {
        (self.width / self.model.factor, self.height / self.model.factor)
    }

    pub fn sample_poses(&self) -> &[Pose] {
        &self.sample_poses
    }

    pub fn sample_depths(&self) -> &[InverseDepthMap] {
        &self.sample_depths
    }

    /// Positions in the `source` camera (the frame's own camera when `None`)
    /// of every high-resolution pixel of every exposure sample, indexed
    /// `m * width * height + pixel`. Points behind the camera are NaN.
    pub fn positions(&self, source: &Pose) -> Vec<[f64; 2]> {
        let n = self.width * self.height;
        let w = self.width;
        let k = self.model.intrinsics;
        let per_sample: Vec<Vec<[f64; 2]>> = self
            .sample_poses
            .par_iter()
            .zip(&self.sample_depths)
            .map(|(pose, depth)| {
                let warp = RelativeWarp::new(pose, source, &k);
                (0..n)
                    .map(|i| {
                        let (x, y) = ((i % w) as f64, (i / w) as f64);
                        match warp.warp(x, y, depth.data()[i]) {
                            Some((u, v, _)) => [u, v],
                            None => [f64::NAN, f64::NAN],
                        }
                    })
                    .collect()
            })
            .collect();
        per_sample.concat()
    }

    fn check_source(&self, img_w: usize, img_h: usize) -> Result<()> {
        if (img_w, img_h) != (self.width, self.height) {
            return Err(Error::DimensionMismatch(format!(
                "latent image {img_w}x{img_h} vs depth map {}x{}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Applies the operator to `img` living in camera `source`.
    pub fn apply(&self, img: &Image, source: &Pose) -> Result<(Image, Mask)> {
        self.check_source(img.width(), img.height())?;
        let pos = self.positions(source);
        Ok(self.apply_with_positions(img, &pos))
    }

    pub fn apply_with_positions(&self, img: &Image, pos: &[[f64; 2]]) -> (Image, Mask) {
        let f = self.model.factor;
        let m_total = self.model.samples;
        let (lw, lh) = self.lr_size();
        let w = self.width;
        let n = w * self.height;
        let ch = img.channels();
        let inv_m = 1.0 / m_total as f64;
        let inv_block = 1.0 / (f * f) as f64;
        let rows: Vec<(Vec<f64>, Vec<bool>)> = (0..lh)
            .into_par_iter()
            .map(|ly| {
                let mut vals = vec![0.0; lw * ch];
                let mut valid = vec![true; lw];
                let mut sample = [0.0; 3];
                let mut blurred = [0.0; 3];
                for lx in 0..lw {
                    let mut acc = [0.0; 3];
                    for dy in 0..f {
                        for dx in 0..f {
                            let i = (ly * f + dy) * w + lx * f + dx;
                            blurred[..ch].fill(0.0);
                            for m in 0..m_total {
                                let [u, v] = pos[m * n + i];
                                if !img.sample_into(u, v, &mut sample[..ch]) {
                                    valid[lx] = false;
                                }
                                for c in 0..ch {
                                    blurred[c] += sample[c];
                                }
                            }
                            for c in 0..ch {
                                acc[c] += blurred[c] * inv_m;
                            }
                        }
                    }
                    for c in 0..ch {
                        vals[lx * ch + c] = acc[c] * inv_block;
                    }
                }
                (vals, valid)
            })
            .collect();
        let mut data = Vec::with_capacity(lw * lh * ch);
        let mut mask = Vec::with_capacity(lw * lh);
        for (v, m) in rows {
            data.extend(v);
            mask.extend(m);
        }
        (
            Image::from_vec(lw, lh, ch, data).expect("finite capture output"),
            Mask {
                width: lw,
                height: lh,
                data: mask,
            },
        )
    }

    /// Explicit single-channel operator reproducing [`CaptureGeometry::apply`].
    pub fn operator(&self, source: &Pose) -> SparseLinearOperator {
        let pos = self.positions(source);
        self.operator_with_positions(&pos)
    }

    pub fn operator_with_positions(&self, pos: &[[f64; 2]]) -> SparseLinearOperator {
        let f = self.model.factor;
        let m_total = self.model.samples;
        let (lw, lh) = self.lr_size();
        let (w, h) = (self.width, self.height);
        let n = w * h;
        let weight = 1.0 / (m_total * f * f) as f64;
        let rows: Vec<(Vec<(usize, f64)>, bool)> = (0..lw * lh)
            .into_par_iter()
            .map(|r| {
                let (lx, ly) = (r % lw, r / lw);
                let mut entries = Vec::with_capacity(4 * m_total * f * f);
                let mut valid = true;
                for dy in 0..f {
                    for dx in 0..f {
                        let i = (ly * f + dy) * w + lx * f + dx;
                        for m in 0..m_total {
                            let [u, v] = pos[m * n + i];
                            let taps = bilinear_taps(w, h, u, v);
                            valid &= taps.in_bounds;
                            for k in 0..4 {
                                if taps.weights[k] != 0.0 {
                                    entries.push((taps.indices[k], taps.weights[k] * weight));
                                }
                            }
                        }
                    }
                }
                (entries, valid)
            })
            .collect();
        let valid = rows.iter().map(|r| r.1).collect();
        let matrix = CsrMatrix::from_rows(n, rows.into_iter().map(|r| r.0).collect());
        SparseLinearOperator::new(matrix, valid)
    }
}

/// Sparse matrix from flattened latent pixels to observed pixels, with the
/// validity of every output row.
#[derive(Clone, Debug)]
pub struct SparseLinearOperator {
    matrix: CsrMatrix,
    transpose: CsrMatrix,
    valid: Vec<bool>,
}

impl SparseLinearOperator {
    pub fn new(matrix: CsrMatrix, valid: Vec<bool>) -> Self {
        assert_eq!(valid.len(), matrix.rows);
        let transpose = matrix.transpose();
        SparseLinearOperator {
            matrix,
            transpose,
            valid,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(CsrMatrix::identity(n), vec![true; n])
    }

    pub fn output_dim(&self) -> usize {
        self.matrix.rows
    }

    pub fn input_dim(&self) -> usize {
        self.matrix.cols
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.matrix.rows).flat_map(move |r| self.matrix.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "operator input {} vs vector {}",
                self.input_dim(),
                x.len()
            )));
        }
        Ok(self.matrix.mul_vec(x))
    }

    /// Applies the operator to every channel of a latent image.
    pub fn apply_image(&self, img: &Image, out_w: usize, out_h: usize) -> Result<Image> {
        if out_w * out_h != self.output_dim() {
            return Err(Error::DimensionMismatch("output size".into()));
        }
        let planes = (0..img.channels())
            .map(|c| {
                let y = self.apply(img.plane(c).data())?;
                Image::from_vec(out_w, out_h, 1, y)
            })
            .collect::<Result<Vec<_>>>()?;
        Image::from_planes(&planes)
    }

    pub fn write_triplets(&self, path: &Path) -> Result<()> {
        let mut s = String::new();
        for (r, c, v) in self.triplets() {
            writeln!(s, "{r} {c} {v:.17e}").unwrap();
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

/// Transpose application `A^T y`.
pub fn apply_adjoint(op: &SparseLinearOperator, residual: &[f64]) -> Result<Vec<f64>> {
    if residual.len() != op.output_dim() {
        return Err(Error::DimensionMismatch(format!(
            "operator output {} vs residual {}",
            op.output_dim(),
            residual.len()
        )));
    }
    Ok(op.transpose.mul_vec(residual))
}

/// Captures `img` (a latent image in camera `source`, or the frame's own
/// camera when `None`) with the exposure of the frame at `pose_t`.
pub fn apply_capture(
    img: &Image,
    depth: &InverseDepthMap,
    pose_t: &Pose,
    pose_prev: &Pose,
    model: &CaptureModel,
    source: Option<&Pose>,
) -> Result<(Image, Mask)> {
    let geom = CaptureGeometry::new(depth, pose_t, pose_prev, model)?;
    geom.apply(img, source.unwrap_or(pose_t))
}

pub fn build_capture_operator(
    depth: &InverseDepthMap,
    pose_t: &Pose,
    pose_prev: &Pose,
    model: &CaptureModel,
    source: Option<&Pose>,
) -> Result<SparseLinearOperator> {
    let geom = CaptureGeometry::new(depth, pose_t, pose_prev, model)?;
    Ok(geom.operator(source.unwrap_or(pose_t)))
}
