//! Procedural scenes with exact ground truth, rendered by ray casting.
//!
//! World coordinates coincide with a camera at the identity pose: `z` points
//! into the scene. Planes are fronto-parallel and carry a texture defined in
//! world units, so every view of the scene is rendered analytically rather
//! than warped from another view.

use std::path::PathBuf;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::capture::{sample_times, CaptureModel};
use crate::error::{Error, Result};
use crate::geometry::{interpolate_pose, se3_exp, Intrinsics, InverseDepthMap, Pose, Twist};
use crate::imaging::{downsample_box, io, Image, Mask};
use crate::solver::previous_pose;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    Plane,
    TwoPlanes,
    BoxOverPlane,
}

impl SceneKind {
    pub fn name(&self) -> &'static str {
        match self {
            SceneKind::Plane => "plane",
            SceneKind::TwoPlanes => "two_planes",
            SceneKind::BoxOverPlane => "box",
        }
    }

    pub fn parse(s: &str) -> Result<SceneKind> {
        match s {
            "plane" => Ok(SceneKind::Plane),
            "two_planes" => Ok(SceneKind::TwoPlanes),
            "box" => Ok(SceneKind::BoxOverPlane),
            _ => Err(Error::invalid(format!("unknown scene kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TextureSource {
    /// Soft checkerboard with value noise, seeded.
    Procedural { seed: u64 },
    /// An image tiled over the world plane, `scale` world units per texel.
    Png { path: PathBuf, scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub kind: SceneKind,
    pub texture: TextureSource,
    /// Inverse depth of the background plane.
    pub background_inverse_depth: f64,
    /// Inverse depth of the foreground plane or the box front face.
    pub foreground_inverse_depth: f64,
    /// Foreground rectangle as fractions of the reference view `[x0, y0, x1, y1]`.
    pub foreground_rect: [f64; 4],
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    /// Frame motions: `P_0 = exp(xi_0)`, `P_t = exp(xi_t) P_{t-1}`.
    pub twists: Vec<Twist>,
    pub exposure_fraction: f64,
    pub render_samples: usize,
    pub noise_sigma: f64,
    pub factor: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            kind: SceneKind::BoxOverPlane,
            texture: TextureSource::Procedural { seed: 7 },
            background_inverse_depth: 0.4,
            foreground_inverse_depth: 0.7,
            foreground_rect: [0.3, 0.28, 0.68, 0.72],
            width: 128,
            height: 96,
            intrinsics: Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 63.5,
                cy: 47.5,
            },
            twists: vec![
                Twist::zero(),
                Twist::from_slice(&[0.030, 0.005, 0.002, 0.010, -0.020, 0.004]),
                Twist::from_slice(&[0.025, -0.010, 0.004, -0.015, -0.010, 0.010]),
                Twist::from_slice(&[0.035, 0.008, -0.003, 0.005, 0.025, -0.008]),
                Twist::from_slice(&[0.020, 0.012, 0.002, 0.020, -0.005, 0.012]),
            ],
            exposure_fraction: 0.5,
            render_samples: 64,
            noise_sigma: 0.005,
            factor: 2,
            seed: 1,
        }
    }
}

impl SceneSpec {
    pub fn frames(&self) -> usize {
        self.twists.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames() < 2 {
            return Err(Error::InsufficientFrames {
                needed: 2,
                got: self.frames(),
            });
        }
        if !(self.background_inverse_depth > 0.0 && self.foreground_inverse_depth > 0.0) {
            return Err(Error::invalid("plane inverse depths must be positive"));
        }
        if self.kind != SceneKind::Plane && self.foreground_inverse_depth <= self.background_inverse_depth {
            return Err(Error::invalid("the foreground must be nearer than the background"));
        }
        let [x0, y0, x1, y1] = self.foreground_rect;
        if !(x0 < x1 && y0 < y1) {
            return Err(Error::invalid("foreground_rect must have x0 < x1 and y0 < y1"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image size must be positive"));
        }
        if self.factor == 0 || self.width % self.factor != 0 || self.height % self.factor != 0 {
            return Err(Error::NotDivisible {
                width: self.width,
                height: self.height,
                factor: self.factor,
            });
        }
        if self.render_samples == 0 {
            return Err(Error::invalid("render_samples must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise_sigma must be non-negative"));
        }
        if let TextureSource::Png { scale, .. } = &self.texture {
            if !(*scale > 0.0) {
                return Err(Error::invalid("texture scale must be positive"));
            }
        }
        self.capture_model().validate()
    }

    /// Capture model matching this spec, with `render_samples` exposure samples.
    pub fn capture_model(&self) -> CaptureModel {
        CaptureModel {
            intrinsics: self.intrinsics,
            samples: self.render_samples,
            exposure_fraction: self.exposure_fraction,
            factor: self.factor,
        }
    }

    pub fn poses(&self) -> Vec<Pose> {
        let mut poses: Vec<Pose> = Vec::with_capacity(self.frames());
        for (t, xi) in self.twists.iter().enumerate() {
            let step = se3_exp(xi);
            poses.push(if t == 0 { step } else { step.compose(&poses[t - 1]) });
        }
        poses
    }
}

enum Texture {
    Procedural { seed: u64 },
    Image { img: Image, scale: f64 },
}

fn hash(ix: i64, iy: i64, seed: u64) -> u64 {
    let mut h = (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F) ^ seed;
    h ^= h >> 33;
    h = h.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    h ^= h >> 33;
    h = h.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    h ^ (h >> 33)
}

fn unit(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
fn value_noise(u: f64, v: f64, seed: u64) -> f64 {
    let (iu, iv) = (u.floor(), v.floor());
    let (fu, fv) = (smooth(u - iu), smooth(v - iv));
    let (iu, iv) = (iu as i64, iv as i64);
    let n = |dx: i64, dy: i64| unit(hash(iu + dx, iv + dy, seed));
    let top = n(0, 0) * (1.0 - fu) + n(1, 0) * fu;
    let bottom = n(0, 1) * (1.0 - fu) + n(1, 1) * fu;
    top * (1.0 - fv) + bottom * fv
}

impl Texture {
    fn load(src: &TextureSource) -> Result<Texture> {
        Ok(match src {
            TextureSource::Procedural { seed } => Texture::Procedural { seed: *seed },
            TextureSource::Png { path, scale } => {
                let img = io::read_png(path)?;
                let img = if img.channels() == 1 {
                    Image::from_planes(&[img.clone(), img.clone(), img])?
                } else {
                    img
                };
                Texture::Image { img, scale: *scale }
            }
        })
    }

    /// Color at world-plane coordinates `(u, v)`; `face` decorrelates surfaces.
    fn color(&self, u: f64, v: f64, face: u64, out: &mut [f64; 3]) {
        match self {
            Texture::Procedural { seed } => {
                let period = 0.4;
                let (cu, cv) = ((u / period).floor() as i64, (v / period).floor() as i64);
                let cell = hash(cu, cv, seed ^ face.wrapping_mul(0x5851_F42D_4C95_7F2D));
                // Soft-edged checker: a sigmoid of the signed distance to the cell pattern.
                let su = (std::f64::consts::PI * u / period).sin();
                let sv = (std::f64::consts::PI * v / period).sin();
                let checker = 1.0 / (1.0 + (-6.0 * su * sv).exp());
                let fine = value_noise(u / 0.06, v / 0.06, seed.wrapping_add(11 + face));
                let mid = value_noise(u / 0.15, v / 0.15, seed.wrapping_add(23 + face));
                for (c, o) in out.iter_mut().enumerate() {
                    let tint = 0.55 + 0.45 * unit(hash(c as i64, 0, cell));
                    let v = 0.15 + 0.45 * checker * tint + 0.25 * mid + 0.15 * fine;
                    *o = v.clamp(0.0, 1.0);
                }
            }
            Texture::Image { img, scale } => {
                let (w, h) = (img.width() as f64, img.height() as f64);
                let x = (u / scale).rem_euclid(w - 1.0);
                let y = (v / scale).rem_euclid(h - 1.0);
                let mut buf = [0.0; 3];
                img.sample_into(x, y, &mut buf);
                *out = buf;
            }
        }
    }
}

/// Analytic scene geometry in world coordinates.
struct Scene {
    kind: SceneKind,
    z_bg: f64,
    z_fg: f64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    texture: Texture,
}

/// A ray hit: camera depth along the optical axis and texture lookup.
struct Hit {
    depth: f64,
    u: f64,
    v: f64,
    face: u64,
}

impl Scene {
    fn new(spec: &SceneSpec) -> Result<Scene> {
        let z_bg = 1.0 / spec.background_inverse_depth;
        let z_fg = 1.0 / spec.foreground_inverse_depth;
        let k = spec.intrinsics;
        let [fx0, fy0, fx1, fy1] = spec.foreground_rect;
        let (w, h) = (spec.width as f64, spec.height as f64);
        Ok(Scene {
            kind: spec.kind,
            z_bg,
            z_fg,
            x0: (fx0 * w - k.cx) / k.fx * z_fg,
            x1: (fx1 * w - k.cx) / k.fx * z_fg,
            y0: (fy0 * h - k.cy) / k.fy * z_fg,
            y1: (fy1 * h - k.cy) / k.fy * z_fg,
            texture: Texture::load(&spec.texture)?,
        })
    }

    fn in_rect(&self, p: &Vector3<f64>) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }

    /// Nearest intersection of the ray `origin + lambda * dir`, where `dir`
    /// has unit camera-axis component so `lambda` is the camera depth.
    fn intersect(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<Hit> {
        let plane = |z: f64| -> Option<f64> {
            if dir.z.abs() < 1e-15 {
                return None;
            }
            let l = (z - origin.z) / dir.z;
            (l > 0.0).then_some(l)
        };
        let mut best: Option<Hit> = None;
        let mut consider = |l: f64, u: f64, v: f64, face: u64| {
            if best.as_ref().is_none_or(|b| l < b.depth) {
                best = Some(Hit { depth: l, u, v, face });
            }
        };
        if let Some(l) = plane(self.z_bg) {
            let p = origin + dir * l;
            consider(l, p.x, p.y, 0);
        }
        match self.kind {
            SceneKind::Plane => {}
            SceneKind::TwoPlanes => {
                if let Some(l) = plane(self.z_fg) {
                    let p = origin + dir * l;
                    if self.in_rect(&p) {
                        consider(l, p.x, p.y, 1);
                    }
                }
            }
            SceneKind::BoxOverPlane => {
                let lo = Vector3::new(self.x0, self.y0, self.z_fg);
                let hi = Vector3::new(self.x1, self.y1, self.z_bg);
                let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
                let mut axis = 0;
                for a in 0..3 {
                    if dir[a].abs() < 1e-15 {
                        if origin[a] < lo[a] || origin[a] > hi[a] {
                            tmin = f64::INFINITY;
                        }
                        continue;
                    }
                    let (mut t0, mut t1) = ((lo[a] - origin[a]) / dir[a], (hi[a] - origin[a]) / dir[a]);
                    if t0 > t1 {
                        std::mem::swap(&mut t0, &mut t1);
                    }
                    if t0 > tmin {
                        tmin = t0;
                        axis = a;
                    }
                    tmax = tmax.min(t1);
                }
                if tmin <= tmax && tmin > 0.0 {
                    let p = origin + dir * tmin;
                    let (u, v) = match axis {
                        0 => (p.z, p.y),
                        1 => (p.x, p.z),
                        _ => (p.x, p.y),
                    };
                    consider(tmin, u, v, 2 + axis as u64);
                }
            }
        }
        best
    }

    /// Renders the latent image and exact inverse depth seen from `pose`.
    fn render(&self, pose: &Pose, k: &Intrinsics, w: usize, h: usize) -> (Image, InverseDepthMap, Mask) {
        let origin = pose.center();
        let rt = pose.rotation.transpose();
        let rows: Vec<(Vec<f64>, Vec<f64>, Vec<bool>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut col = Vec::with_capacity(w * 3);
                let mut inv = Vec::with_capacity(w);
                let mut ok = Vec::with_capacity(w);
                let mut c = [0.0; 3];
                for x in 0..w {
                    let dir_c = Vector3::new((x as f64 - k.cx) / k.fx, (y as f64 - k.cy) / k.fy, 1.0);
                    let dir = rt * dir_c;
                    match self.intersect(&origin, &dir) {
                        Some(hit) => {
                            self.texture.color(hit.u, hit.v, hit.face, &mut c);
                            col.extend_from_slice(&c);
                            inv.push(1.0 / hit.depth);
                            ok.push(true);
                        }
                        None => {
                            col.extend_from_slice(&[0.0; 3]);
                            inv.push(1e-6);
                            ok.push(false);
                        }
                    }
                }
                (col, inv, ok)
            })
            .collect();
        let mut col = Vec::with_capacity(w * h * 3);
        let mut inv = Vec::with_capacity(w * h);
        let mut ok = Vec::with_capacity(w * h);
        for (c, i, o) in rows {
            col.extend(c);
            inv.extend(i);
            ok.extend(o);
        }
        (
            Image::from_vec(w, h, 3, col).expect("finite render"),
            InverseDepthMap::new(w, h, inv).expect("positive inverse depth"),
            Mask {
                width: w,
                height: h,
                data: ok,
            },
        )
    }
}

/// Ground truth and observations of a rendered sequence.
#[derive(Clone, Debug)]
pub struct GroundTruthBundle {
    pub latent: Vec<Image>,
    pub depth: Vec<InverseDepthMap>,
    pub poses: Vec<Pose>,
    pub observed: Vec<Image>,
    /// Observed pixels whose footprint saw the scene in every exposure sample.
    pub valid: Vec<Mask>,
}

/// Renders the sharp latent images and inverse depths at shutter close.
pub fn render_scene(spec: &SceneSpec) -> Result<GroundTruthBundle> {
    spec.validate()?;
    let scene = Scene::new(spec)?;
    let poses = spec.poses();
    let mut latent = Vec::new();
    let mut depth = Vec::new();
    for p in &poses {
        let (img, d, _) = scene.render(p, &spec.intrinsics, spec.width, spec.height);
        latent.push(img);
        depth.push(d);
    }
    Ok(GroundTruthBundle {
        latent,
        depth,
        poses,
        observed: Vec::new(),
        valid: Vec::new(),
    })
}

/// Fills in the observations: averaged re-rendered exposure views, box
/// downsampling and clipped Gaussian noise.
pub fn render_observations(bundle: &mut GroundTruthBundle, spec: &SceneSpec) -> Result<()> {
    spec.validate()?;
    let scene = Scene::new(spec)?;
    let model = spec.capture_model();
    let alphas = sample_times(&model, 1.0, 0.0);
    let (w, h) = (spec.width, spec.height);
    let results: Vec<Result<(Image, Mask)>> = (0..bundle.poses.len())
        .map(|t| {
            let prev = previous_pose(&bundle.poses, t)?;
            let mut acc = vec![0.0; w * h * 3];
            let mut valid = vec![true; w * h];
            for a in &alphas {
                let pose = interpolate_pose(&bundle.poses[t], &prev, *a)?;
                let (img, _, ok) = scene.render(&pose, &spec.intrinsics, w, h);
                for (s, v) in acc.iter_mut().zip(img.data()) {
                    *s += v;
                }
                for (s, o) in valid.iter_mut().zip(&ok.data) {
                    *s &= *o;
                }
            }
            let inv = 1.0 / alphas.len() as f64;
            let blurred = Image::from_vec(w, h, 3, acc.into_iter().map(|v| v * inv).collect())?;
            let lr = downsample_box(&blurred, spec.factor)?;
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(1_000_003).wrapping_add(t as u64));
            let noise = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
                .map_err(|e| Error::invalid(e.to_string()))?;
            let data: Vec<f64> = lr
                .data()
                .iter()
                .map(|v| {
                    let n = if spec.noise_sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    (v + n).clamp(0.0, 1.0)
                })
                .collect();
            let f = spec.factor;
            let (lw, lh) = (w / f, h / f);
            let mask = Mask {
                width: lw,
                height: lh,
                data: (0..lw * lh)
                    .map(|p| {
                        let (lx, ly) = (p % lw, p / lw);
                        (0..f * f).all(|k| valid[(ly * f + k / f) * w + lx * f + k % f])
                    })
                    .collect(),
            };
            Ok((Image::from_vec(lw, lh, 3, data)?, mask))
        })
        .collect();
    bundle.observed.clear();
    bundle.valid.clear();
    for r in results {
        let (b, m) = r?;
        bundle.observed.push(b);
        bundle.valid.push(m);
    }
    Ok(())
}

/// Latent and observed parts together.
pub fn generate(spec: &SceneSpec) -> Result<GroundTruthBundle> {
    let mut bundle = render_scene(spec)?;
    render_observations(&mut bundle, spec)?;
    Ok(bundle)
}

/// Inverse depth of the scene along the pixel ray, by direct ray-plane
/// intersection of every surface; exposed for oracles.
pub fn ray_inverse_depth(spec: &SceneSpec, pose: &Pose, x: f64, y: f64) -> Result<Option<f64>> {
    let scene = Scene::new(spec)?;
    let k = spec.intrinsics;
    let dir = pose.rotation.transpose() * Vector3::new((x - k.cx) / k.fx, (y - k.cy) / k.fy, 1.0);
    Ok(scene.intersect(&pose.center(), &dir).map(|h| 1.0 / h.depth))
}

/// Seeds for the solver: ground-truth poses, each perturbed by a random left
/// twist of norm `magnitude` (frame 0 included).
pub fn perturb_poses(poses: &[Pose], magnitude: f64, seed: u64) -> Vec<Pose> {
    if magnitude == 0.0 {
        return poses.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    poses
        .iter()
        .map(|p| {
            let v: Vec<f64> = (0..6).map(|_| normal.sample(&mut rng)).collect();
            let t = Twist::from_slice(&v);
            p.perturb(&t.scale(magnitude / t.norm()))
        })
        .collect()
}
