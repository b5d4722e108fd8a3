use nalgebra::{Matrix2x3, Matrix2x6, Matrix3, Matrix3x6, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::se3::{hat, Pose};
use crate::imaging::Image;

/// Minimum camera-frame depth of a valid projection.
pub const MIN_DEPTH: f64 = 1e-9;

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && cx.is_finite() && cy.is_finite()) {
            return Err(Error::invalid(format!("bad intrinsics fx={fx} fy={fy}")));
        }
        Ok(Intrinsics { fx, fy, cx, cy })
    }

    /// Intrinsics of the grid obtained by box-downsampling by `scale`, with
    /// concentric pixel centers.
    pub fn downscaled(&self, scale: f64) -> Intrinsics {
        let off = (scale - 1.0) / 2.0;
        Intrinsics {
            fx: self.fx / scale,
            fy: self.fy / scale,
            cx: (self.cx - off) / scale,
            cy: (self.cy - off) / scale,
        }
    }

    #[inline]
    pub fn backproject(&self, x: f64, y: f64, inv_depth: f64) -> Vector3<f64> {
        let z = 1.0 / inv_depth;
        Vector3::new((x - self.cx) / self.fx * z, (y - self.cy) / self.fy * z, z)
    }

    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Vector2<f64> {
        Vector2::new(self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy)
    }

    #[inline]
    fn projection_jacobian(&self, p: &Vector3<f64>) -> Matrix2x3<f64> {
        let iz = 1.0 / p.z;
        Matrix2x3::new(
            self.fx * iz,
            0.0,
            -self.fx * p.x * iz * iz,
            0.0,
            self.fy * iz,
            -self.fy * p.y * iz * iz,
        )
    }
}

/// Per-pixel inverse depth; every value is finite and strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub struct InverseDepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl InverseDepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {width}x{height} inverse-depth map",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::invalid(format!("inverse depth must be positive, got {bad}")));
        }
        Ok(InverseDepthMap {
            width,
            height,
            data,
        })
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_image(img: &Image) -> Result<Self> {
        if img.channels() != 1 {
            return Err(Error::DimensionMismatch("inverse depth must be single-channel".into()));
        }
        Self::new(img.width(), img.height(), img.data().to_vec())
    }

    pub fn to_image(&self) -> Image {
        Image::from_vec(self.width, self.height, 1, self.data.clone())
            .expect("inverse depth values are finite")
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Returns a copy with every value clamped to `[lo, hi]`.
    pub fn clamped(&self, lo: f64, hi: f64) -> InverseDepthMap {
        InverseDepthMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v.clamp(lo, hi)).collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> InverseDepthMap {
        assert!(s > 0.0);
        InverseDepthMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

/// Derivatives of a warped pixel position.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpJacobian {
    /// With respect to the source pixel's inverse depth.
    pub du_dd: Vector2<f64>,
    /// With respect to a left twist on the source pose.
    pub du_deps_src: Matrix2x6<f64>,
    /// With respect to a left twist on the destination pose.
    pub du_deps_dst: Matrix2x6<f64>,
}

/// Precomputed relative transform for warping many pixels between two cameras.
#[derive(Clone, Copy, Debug)]
pub struct RelativeWarp {
    identity: bool,
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    k: Intrinsics,
}

impl RelativeWarp {
    pub fn new(src: &Pose, dst: &Pose, k: &Intrinsics) -> Self {
        let rel = dst.compose(&src.inverse());
        RelativeWarp {
            identity: src == dst,
            rotation: rel.rotation,
            translation: rel.translation,
            k: *k,
        }
    }

    pub fn intrinsics(&self) -> &Intrinsics {
        &self.k
    }

    /// Warped position and destination-camera depth, or `None` behind the camera.
    #[inline]
    pub fn warp(&self, x: f64, y: f64, inv_depth: f64) -> Option<(f64, f64, f64)> {
        if self.identity {
            return Some((x, y, 1.0 / inv_depth));
        }
        let p = self.rotation * self.k.backproject(x, y, inv_depth) + self.translation;
        if p.z <= MIN_DEPTH {
            return None;
        }
        let u = self.k.project(&p);
        Some((u.x, u.y, p.z))
    }

    pub fn jacobians(&self, x: f64, y: f64, inv_depth: f64) -> Option<WarpJacobian> {
        let src_pt = self.k.backproject(x, y, inv_depth);
        let dst_pt = self.rotation * src_pt + self.translation;
        if dst_pt.z <= MIN_DEPTH {
            return None;
        }
        let jp = self.k.projection_jacobian(&dst_pt);
        let du_dd = jp * (self.rotation * (-src_pt / inv_depth));
        // exp(eps) on the destination moves the transformed point by v + w x p.
        let mut d_dst = Matrix3x6::zeros();
        d_dst.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
        d_dst.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-hat(&dst_pt)));
        // exp(-eps) on the source side acts before the relative rotation.
        let mut d_src = Matrix3x6::zeros();
        d_src.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-self.rotation));
        d_src
            .fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&(self.rotation * hat(&src_pt)));
        Some(WarpJacobian {
            du_dd,
            du_deps_src: jp * d_src,
            du_deps_dst: jp * d_dst,
        })
    }
}

/// Warps pixel `x` with inverse depth `d` from camera `p_src` into `p_dst`.
pub fn warp_pixel(
    x: Vector2<f64>,
    d: f64,
    p_src: &Pose,
    p_dst: &Pose,
    k: &Intrinsics,
) -> Result<(Vector2<f64>, f64)> {
    if !(d > 0.0) {
        return Err(Error::invalid(format!("inverse depth must be positive, got {d}")));
    }
    let w = RelativeWarp::new(p_src, p_dst, k);
    match w.warp(x.x, x.y, d) {
        Some((u, v, z)) => Ok((Vector2::new(u, v), z)),
        None => {
            let p = w.rotation * k.backproject(x.x, x.y, d) + w.translation;
            Err(Error::BehindCamera { depth: p.z })
        }
    }
}

/// Jacobians of the warp from `p_t` into `p_s` for left twists on both poses.
pub fn warp_jacobians(
    x: Vector2<f64>,
    d: f64,
    p_t: &Pose,
    p_s: &Pose,
    k: &Intrinsics,
) -> Result<WarpJacobian> {
    let w = RelativeWarp::new(p_t, p_s, k);
    w.jacobians(x.x, x.y, d).ok_or_else(|| {
        let p = w.rotation * k.backproject(x.x, x.y, d) + w.translation;
        Error::BehindCamera { depth: p.z }
    })
}

/// Forward-splats `depth` (seen from `p_src`) into the camera `p_dst`.
///
/// Each source pixel lands on its rounded target pixel; the nearest surface
/// wins and ties keep the smaller source index. Holes take the value of the
/// nearest filled pixel on the same row, or of the nearest filled row.
pub fn warp_depth_map(
    depth: &InverseDepthMap,
    p_src: &Pose,
    p_dst: &Pose,
    k: &Intrinsics,
) -> InverseDepthMap {
    if p_src == p_dst {
        return depth.clone();
    }
    let (w, h) = (depth.width, depth.height);
    let warp = RelativeWarp::new(p_src, p_dst, k);
    let mut zbuf = vec![f64::INFINITY; w * h];
    for y in 0..h {
        for x in 0..w {
            let Some((u, v, z)) = warp.warp(x as f64, y as f64, depth.data[y * w + x]) else {
                continue;
            };
            let (ui, vi) = (u.round(), v.round());
            if ui < 0.0 || vi < 0.0 || ui >= w as f64 || vi >= h as f64 {
                continue;
            }
            let t = vi as usize * w + ui as usize;
            if z < zbuf[t] {
                zbuf[t] = z;
            }
        }
    }
    let filled: Vec<Option<f64>> = zbuf
        .iter()
        .map(|z| if z.is_finite() { Some(1.0 / z) } else { None })
        .collect();
    InverseDepthMap {
        width: w,
        height: h,
        data: fill_holes(&filled, w, h, depth),
    }
}

fn fill_holes(vals: &[Option<f64>], w: usize, h: usize, fallback: &InverseDepthMap) -> Vec<f64> {
    let mut rows: Vec<Option<Vec<f64>>> = Vec::with_capacity(h);
    for y in 0..h {
        let row = &vals[y * w..(y + 1) * w];
        if row.iter().all(Option::is_none) {
            rows.push(None);
            continue;
        }
        let mut left = vec![None; w];
        let mut last: Option<(usize, f64)> = None;
        for x in 0..w {
            if let Some(v) = row[x] {
                last = Some((x, v));
            }
            left[x] = last;
        }
        let mut out = vec![0.0; w];
        let mut next: Option<(usize, f64)> = None;
        for x in (0..w).rev() {
            if let Some(v) = row[x] {
                next = Some((x, v));
            }
            out[x] = match (left[x], next) {
                (Some((lx, lv)), Some((nx, nv))) => {
                    if x - lx <= nx - x {
                        lv
                    } else {
                        nv
                    }
                }
                (Some((_, lv)), None) => lv,
                (None, Some((_, nv))) => nv,
                (None, None) => unreachable!(),
            };
        }
        rows.push(Some(out));
    }
    if rows.iter().all(Option::is_none) {
        let mean = fallback.data.iter().sum::<f64>() / fallback.data.len() as f64;
        return vec![mean; w * h];
    }
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let src = (0..h)
            .filter(|yy| rows[*yy].is_some())
            .min_by_key(|yy| (yy.abs_diff(y), *yy))
            .expect("at least one filled row");
        data.extend_from_slice(rows[src].as_ref().unwrap());
    }
    data
}
