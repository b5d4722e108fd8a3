//! Sequential coarse-to-fine initialization of depths and poses from the
//! observations alone, before any latent image exists.
//!
//! Each frame `t` is registered against a neighbor `s` by comparing the
//! observation of `s` blurred with the exposure of `t` against the
//! observation of `t` blurred with the exposure of `s`. Both blurs are
//! approximated locally by the displacement of the pixel's 3-D point along
//! the respective exposure path.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::capture::{sample_times, CaptureModel};
use crate::energy::EnergyParams;
use crate::error::{Error, Result};
use crate::geometry::{
    interpolate_pose, se3_exp, se3_log, warp_depth_map, Intrinsics, InverseDepthMap, Pose, RelativeWarp, Twist,
};
use crate::imaging::{downsample_box, upsample_bicubic, Image};
use crate::solver::normal::{add_tv_product, tv_weights, DepthSystem, FrameBlock};
use crate::solver::structure::central_gradient;
use crate::solver::visibility::update_visibility;
use crate::solver::{neighbors, previous_pose, SequenceState, SolverConfig};

/// One pyramid level of a frame pair.
struct PairLevel<'a> {
    b_t: &'a Image,
    b_s: &'a Image,
    k: Intrinsics,
    pose_s: Pose,
    /// Pose preceding frame `t`; `None` when it is `pose_s`.
    prev_t: Option<Pose>,
    prev_s: Pose,
    alphas: Vec<f64>,
    /// Border pixels left out so that every level compares a fixed pixel set.
    margin: usize,
}

struct Linearization {
    r0: Vec<f64>,
    a: Vec<f64>,
    b: Vec<[f64; 6]>,
    /// Derivative in the twist of `pose_s`.
    b_dst: Vec<[f64; 6]>,
    /// Pixel index of every row.
    pixel: Vec<usize>,
}

impl PairLevel<'_> {
    fn sample_poses(&self, pose_t: &Pose) -> Result<(Vec<Pose>, Vec<Pose>)> {
        let prev_t = self.prev_t.unwrap_or(self.pose_s);
        let mut ts = Vec::with_capacity(self.alphas.len());
        let mut ss = Vec::with_capacity(self.alphas.len());
        for &a in &self.alphas {
            ts.push(interpolate_pose(pose_t, &prev_t, a)?);
            ss.push(interpolate_pose(&self.pose_s, &self.prev_s, a)?);
        }
        Ok((ts, ss))
    }

    /// Residual rows `lhs - rhs` per pixel and channel, with derivatives of
    /// `lhs` in the pixel's inverse depth and the twist of `pose_t`.
    fn linearize(&self, depth: &InverseDepthMap, pose_t: &Pose, with_jacobian: bool) -> Result<Linearization> {
        let (w, h) = (depth.width(), depth.height());
        let ch = self.b_t.channels();
        let (ts, ss) = self.sample_poses(pose_t)?;
        let to_s = RelativeWarp::new(pose_t, &self.pose_s, &self.k);
        let to_ts: Vec<RelativeWarp> = ts.iter().map(|p| RelativeWarp::new(pose_t, p, &self.k)).collect();
        let to_ss: Vec<RelativeWarp> = ss.iter().map(|p| RelativeWarp::new(pose_t, p, &self.k)).collect();
        let (gx, gy) = central_gradient(self.b_s);
        let inv_m = 1.0 / self.alphas.len() as f64;
        let rows: Vec<Linearization> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut out = Linearization {
                    r0: Vec::new(),
                    a: Vec::new(),
                    b: Vec::new(),
                    b_dst: Vec::new(),
                    pixel: Vec::new(),
                };
                let mut buf = [0.0; 3];
                let mut bx = [0.0; 3];
                let mut by = [0.0; 3];
                if y < self.margin || y + self.margin >= h {
                    return out;
                }
                for x in self.margin..w.saturating_sub(self.margin) {
                    let i = y * w + x;
                    let d = depth.data()[i];
                    let (xf, yf) = (x as f64, y as f64);
                    let Some((u, v, _)) = to_s.warp(xf, yf, d) else { continue };
                    let mut lhs = [0.0; 3];
                    let mut rhs = [0.0; 3];
                    let mut g = [[0.0; 2]; 3];
                    let mut ok = true;
                    for (wt, ws) in to_ts.iter().zip(&to_ss) {
                        let (Some(p), Some(q)) = (wt.warp(xf, yf, d), ws.warp(xf, yf, d)) else {
                            ok = false;
                            break;
                        };
                        let (lu, lv) = (u + xf - p.0, v + yf - p.1);
                        self.b_s.sample_into(lu, lv, &mut buf[..ch]);
                        for c in 0..ch {
                            lhs[c] += buf[c] * inv_m;
                        }
                        if with_jacobian {
                            gx.sample_into(lu, lv, &mut bx[..ch]);
                            gy.sample_into(lu, lv, &mut by[..ch]);
                            for c in 0..ch {
                                g[c][0] += bx[c] * inv_m;
                                g[c][1] += by[c] * inv_m;
                            }
                        }
                        self.b_t.sample_into(xf + u - q.0, yf + v - q.1, &mut buf[..ch]);
                        for c in 0..ch {
                            rhs[c] += buf[c] * inv_m;
                        }
                    }
                    if !ok {
                        continue;
                    }
                    let jac = if with_jacobian { to_s.jacobians(xf, yf, d) } else { None };
                    for c in 0..ch {
                        out.pixel.push(i);
                        out.r0.push(lhs[c] - rhs[c]);
                        if let Some(j) = &jac {
                            out.a.push(g[c][0] * j.du_dd[0] + g[c][1] * j.du_dd[1]);
                            out.b.push(std::array::from_fn(|k| {
                                g[c][0] * j.du_deps_src[(0, k)] + g[c][1] * j.du_deps_src[(1, k)]
                            }));
                            out.b_dst.push(std::array::from_fn(|k| {
                                g[c][0] * j.du_deps_dst[(0, k)] + g[c][1] * j.du_deps_dst[(1, k)]
                            }));
                        } else {
                            out.a.push(0.0);
                            out.b.push([0.0; 6]);
                            out.b_dst.push([0.0; 6]);
                        }
                    }
                }
                out
            })
            .collect();
        let mut all = Linearization {
            r0: Vec::new(),
            a: Vec::new(),
            b: Vec::new(),
            b_dst: Vec::new(),
            pixel: Vec::new(),
        };
        for r in rows {
            all.r0.extend(r.r0);
            all.a.extend(r.a);
            all.b.extend(r.b);
            all.b_dst.extend(r.b_dst);
            all.pixel.extend(r.pixel);
        }
        Ok(all)
    }

    fn data_energy(&self, depth: &InverseDepthMap, pose_t: &Pose) -> Result<f64> {
        let lin = self.linearize(depth, pose_t, false)?;
        Ok(lin.r0.iter().map(|r| r.abs()).sum())
    }

    fn energy(&self, depth: &InverseDepthMap, pose_t: &Pose, lambda_d: f64) -> Result<f64> {
        Ok(self.data_energy(depth, pose_t)? + lambda_d * depth_tv(depth))
    }
}

fn depth_tv(depth: &InverseDepthMap) -> f64 {
    let (w, h) = (depth.width(), depth.height());
    let v = depth.data();
    let mut tv = 0.0;
    for p in 0..w * h {
        let (x, y) = (p % w, p / w);
        let gx = if x + 1 < w { v[p + 1] - v[p] } else { 0.0 };
        let gy = if y + 1 < h { v[p + w] - v[p] } else { 0.0 };
        tv += gx.hypot(gy);
    }
    tv
}

/// Unknowns refined on a pyramid level.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Refine {
    Depth,
    Pose,
}

/// Gauss-Newton IRLS on one pyramid level, over the depth or over the pose.
fn refine_level(
    level: &PairLevel,
    depth: &mut InverseDepthMap,
    pose_t: &mut Pose,
    refine: Refine,
    params: &EnergyParams,
    config: &SolverConfig,
) -> Result<()> {
    let (w, h) = (depth.width(), depth.height());
    let n = w * h;
    for _ in 0..config.init_iters {
        let before = level.energy(depth, pose_t, params.lambda_d)?;
        let lin = level.linearize(depth, pose_t, true)?;
        let mut delta = vec![0.0; n];
        let mut eps = [0.0; 6];
        for _ in 0..config.irls_inner {
            let weight = |r: usize| {
                let b = &lin.b[r];
                let model = lin.r0[r] + lin.a[r] * delta[lin.pixel[r]] + (0..6).map(|k| b[k] * eps[k]).sum::<f64>();
                1.0 / model.abs().max(config.irls_epsilon)
            };
            match refine {
                Refine::Pose => {
                    let mut hpp = DMatrix::zeros(6, 6);
                    let mut gp = DVector::zeros(6);
                    for r in 0..lin.r0.len() {
                        let (wr, b) = (weight(r), &lin.b[r]);
                        for j in 0..6 {
                            gp[j] -= wr * b[j] * lin.r0[r];
                            for k in 0..6 {
                                hpp[(j, k)] += wr * b[j] * b[k];
                            }
                        }
                    }
                    for i in 0..6 {
                        hpp[(i, i)] += config.step_damping * hpp[(i, i)] + 1e-9;
                    }
                    let Some(c) = hpp.cholesky() else { break };
                    let x = c.solve(&gp);
                    eps = std::array::from_fn(|k| x[k]);
                }
                Refine::Depth => {
                    let mut diag = vec![0.0; n];
                    let mut rhs = vec![0.0; n];
                    for r in 0..lin.r0.len() {
                        let (wr, a, i) = (weight(r), lin.a[r], lin.pixel[r]);
                        diag[i] += wr * a * a;
                        rhs[i] -= wr * a * lin.r0[r];
                    }
                    let current: Vec<f64> = depth.data().iter().zip(&delta).map(|(d, e)| d + e).collect();
                    let tv = tv_weights(w, h, &current, |_| params.lambda_d, config.tv_beta, config.irls_epsilon);
                    let mut lap = vec![0.0; n];
                    add_tv_product(w, h, &tv, depth.data(), &mut lap);
                    for (r, l) in rhs.iter_mut().zip(&lap) {
                        *r -= l;
                    }
                    let system = DepthSystem::new(w, h, 1, diag, tv, config.step_damping);
                    let (x, _) = system.solve(&rhs, config.cg_iters, config.cg_tol);
                    if x.iter().any(|v| !v.is_finite()) {
                        break;
                    }
                    delta = x;
                }
            }
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let data = depth
                .data()
                .iter()
                .zip(&delta)
                .map(|(d, e)| (d + alpha * e).clamp(config.d_min, config.d_max))
                .collect();
            let cand_depth = InverseDepthMap::new(w, h, data)?;
            let cand_pose = pose_t.perturb(&Twist::from_slice(&eps).scale(alpha));
            let e = level.energy(&cand_depth, &cand_pose, params.lambda_d)?;
            if e < before {
                accepted = Some((cand_depth, cand_pose, e));
                break;
            }
            alpha *= 0.5;
        }
        let Some((d, p, e)) = accepted else { break };
        *depth = d;
        *pose_t = p;
        if before - e <= 1e-4 * before {
            break;
        }
    }
    Ok(())
}

/// Width of the ignored border: 1/16 of the smaller image side, at least one pixel.
fn border_margin(min_side: usize) -> usize {
    (min_side / 16).max(1)
}

fn pyramid(img: &Image, step: usize, min_dim: usize) -> Result<Vec<Image>> {
    let mut levels = vec![img.clone()];
    loop {
        let last = levels.last().unwrap();
        let (w, h) = (last.width(), last.height());
        if w % step != 0 || h % step != 0 || w / step < min_dim || h / step < min_dim {
            break;
        }
        levels.push(downsample_box(last, step)?);
    }
    Ok(levels)
}

fn resample_depth(depth: &InverseDepthMap, w: usize, h: usize, config: &SolverConfig) -> Result<InverseDepthMap> {
    let (dw, dh) = (depth.width(), depth.height());
    let img = depth.to_image();
    let out = if dw == w && dh == h {
        img
    } else if dw > w {
        downsample_box(&img, dw / w)?
    } else {
        upsample_bicubic(&img, w / dw)
    };
    InverseDepthMap::from_image(&out.map(|v| v.clamp(config.d_min, config.d_max)))
}

/// Registers frame `t` against `s` over the pyramid, at observed resolution.
#[allow(clippy::too_many_arguments)]
fn register_pair(
    b_t: &Image,
    b_s: &Image,
    model: &CaptureModel,
    start_depth: &InverseDepthMap,
    pose_t: &mut Pose,
    pose_s: Pose,
    prev_t: Option<Pose>,
    prev_s: Pose,
    refine: Refine,
    params: &EnergyParams,
    config: &SolverConfig,
) -> Result<InverseDepthMap> {
    let step = (1.0 / config.pyramid_factor).round().max(2.0) as usize;
    let pyr_t = pyramid(b_t, step, config.pyramid_min_dim)?;
    let pyr_s = pyramid(b_s, step, config.pyramid_min_dim)?;
    let levels = pyr_t.len().min(pyr_s.len());
    let alphas = sample_times(model, 1.0, 0.0);
    let base_k = model.lr_intrinsics();
    let mut depth: Option<InverseDepthMap> = None;
    for l in (0..levels).rev() {
        let (w, h) = (pyr_t[l].width(), pyr_t[l].height());
        let scale = step.pow(l as u32) as f64;
        let level = PairLevel {
            b_t: &pyr_t[l],
            b_s: &pyr_s[l],
            k: base_k.downscaled(scale),
            pose_s,
            prev_t,
            prev_s,
            alphas: alphas.clone(),
            margin: border_margin(w.min(h)),
        };
        // Pose-only passes keep the given depth at every level.
        let mut d = match &depth {
            Some(d) if refine != Refine::Pose => resample_depth(d, w, h, config)?,
            _ => resample_depth(start_depth, w, h, config)?,
        };
        refine_level(&level, &mut d, pose_t, refine, params, config)?;
        depth = Some(d);
    }
    Ok(depth.expect("at least one pyramid level"))
}

/// Pose slot of frame `t`; frame 0 fixes the gauge.
fn slot(t: usize) -> Option<usize> {
    t.checked_sub(1)
}

/// Observation-only energy of the whole sequence at observed resolution.
fn joint_energy(
    observed: &[Image],
    model: &CaptureModel,
    depth: &[InverseDepthMap],
    poses: &[Pose],
    params: &EnergyParams,
) -> Result<f64> {
    let alphas = sample_times(model, 1.0, 0.0);
    let mut e = 0.0;
    for t in 0..observed.len() {
        for s in neighbors(t, observed.len(), params.neighbor_radius) {
            let level = joint_level(observed, model, poses, t, s, &alphas)?;
            e += level.data_energy(&depth[t], &poses[t])?;
        }
        e += params.lambda_d * depth_tv(&depth[t]);
    }
    Ok(e)
}

fn joint_level<'a>(
    observed: &'a [Image],
    model: &CaptureModel,
    poses: &[Pose],
    t: usize,
    s: usize,
    alphas: &[f64],
) -> Result<PairLevel<'a>> {
    Ok(PairLevel {
        b_t: &observed[t],
        b_s: &observed[s],
        k: model.lr_intrinsics(),
        pose_s: poses[s],
        prev_t: Some(previous_pose(poses, t)?),
        prev_s: previous_pose(poses, s)?,
        alphas: alphas.to_vec(),
        margin: border_margin(observed[t].width().min(observed[t].height())),
    })
}

/// Gauss-Newton IRLS over all depths and all poses but the first, coupling
/// every frame with its neighbors.
fn joint_refine(
    observed: &[Image],
    model: &CaptureModel,
    depth: &mut [InverseDepthMap],
    poses: &mut [Pose],
    refine: Refine,
    params: &EnergyParams,
    config: &SolverConfig,
) -> Result<()> {
    let frames = observed.len();
    let slots = frames - 1;
    let alphas = sample_times(model, 1.0, 0.0);
    let (w, h) = (depth[0].width(), depth[0].height());
    let n = w * h;
    for _ in 0..config.init_iters {
        let before = joint_energy(observed, model, depth, poses, params)?;
        let mut lins = Vec::new();
        for t in 0..frames {
            for s in neighbors(t, frames, params.neighbor_radius) {
                let level = joint_level(observed, model, poses, t, s, &alphas)?;
                lins.push((t, s, level.linearize(&depth[t], &poses[t], true)?));
            }
        }
        let mut delta = vec![vec![0.0; n]; frames];
        let mut eps = vec![[0.0; 6]; slots];
        for _ in 0..config.irls_inner {
            let mut hpp = DMatrix::zeros(6 * slots, 6 * slots);
            let mut gp = DVector::zeros(6 * slots);
            let mut blocks = Vec::with_capacity(frames);
            for t in 0..frames {
                let mut diag = vec![0.0; n];
                let mut rhs = vec![0.0; n];
                let mut coupling: Vec<Option<Vec<[f64; 6]>>> = vec![None; slots];
                for (_, s, lin) in lins.iter().filter(|l| l.0 == t) {
                    let pairs: Vec<(usize, &Vec<[f64; 6]>)> = [(slot(t), &lin.b), (slot(*s), &lin.b_dst)]
                        .into_iter()
                        .filter_map(|(q, b)| q.map(|q| (q, b)))
                        .collect();
                    for (q, _) in &pairs {
                        coupling[*q].get_or_insert_with(|| vec![[0.0; 6]; n]);
                    }
                    for r in 0..lin.r0.len() {
                        let i = lin.pixel[r];
                        let a = lin.a[r];
                        let mut model_r = lin.r0[r] + a * delta[t][i];
                        for (q, b) in &pairs {
                            model_r += (0..6).map(|k| b[r][k] * eps[*q][k]).sum::<f64>();
                        }
                        let wr = 1.0 / model_r.abs().max(config.irls_epsilon);
                        diag[i] += wr * a * a;
                        rhs[i] -= wr * a * lin.r0[r];
                        for (q, b) in &pairs {
                            let col = coupling[*q].as_mut().unwrap();
                            for j in 0..6 {
                                col[i][j] += wr * a * b[r][j];
                                gp[q * 6 + j] -= wr * b[r][j] * lin.r0[r];
                            }
                            for (q2, b2) in &pairs {
                                for j in 0..6 {
                                    for k in 0..6 {
                                        hpp[(q * 6 + j, q2 * 6 + k)] += wr * b[r][j] * b2[r][k];
                                    }
                                }
                            }
                        }
                    }
                }
                let current: Vec<f64> = depth[t].data().iter().zip(&delta[t]).map(|(d, e)| d + e).collect();
                let tv = tv_weights(w, h, &current, |_| params.lambda_d, config.tv_beta, config.irls_epsilon);
                let mut lap = vec![0.0; n];
                add_tv_product(w, h, &tv, depth[t].data(), &mut lap);
                for (r, l) in rhs.iter_mut().zip(&lap) {
                    *r -= l;
                }
                blocks.push(FrameBlock {
                    system: DepthSystem::new(w, h, 1, diag, tv, config.step_damping),
                    rhs,
                    couplings: coupling.into_iter().enumerate().filter_map(|(q, c)| c.map(|c| (q, c))).collect(),
                });
            }
            if refine == Refine::Pose {
                for i in 0..6 * slots {
                    hpp[(i, i)] += config.step_damping * hpp[(i, i)] + 1e-9;
                }
                let Some(c) = hpp.cholesky() else { break };
                let x = c.solve(&gp);
                eps = (0..slots).map(|q| std::array::from_fn(|j| x[q * 6 + j])).collect();
                continue;
            }
            let solved: Vec<Vec<f64>> = blocks
                .par_iter()
                .map(|b| b.system.solve(&b.rhs, config.cg_iters, config.cg_tol).0)
                .collect();
            if solved.iter().flatten().any(|v| !v.is_finite()) {
                break;
            }
            delta = solved;
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let cand_depth = depth
                .iter()
                .zip(&delta)
                .map(|(d, e)| {
                    let data = d.data().iter().zip(e).map(|(v, e)| (v + alpha * e).clamp(config.d_min, config.d_max)).collect();
                    InverseDepthMap::new(w, h, data)
                })
                .collect::<Result<Vec<_>>>()?;
            let cand_poses: Vec<Pose> = (0..frames)
                .map(|t| match slot(t) {
                    Some(q) => poses[t].perturb(&Twist::from_slice(&eps[q]).scale(alpha)),
                    None => poses[t],
                })
                .collect();
            let e = joint_energy(observed, model, &cand_depth, &cand_poses, params)?;
            if e < before {
                accepted = Some((cand_depth, cand_poses, e));
                break;
            }
            alpha *= 0.5;
        }
        let Some((d, p, e)) = accepted else { break };
        depth.clone_from_slice(&d);
        poses.copy_from_slice(&p);
        if before - e <= 1e-4 * before {
            break;
        }
    }
    Ok(())
}

/// Initial state: latent images from bicubic upsampling, depths and poses by
/// sequential pairwise registration.
///
/// `seeds` holds at least the poses of the first two frames. Later frames
/// start from their seed when given, or else from a constant-velocity
/// prediction. With pose refinement on, a closing joint stage moves every
/// pose except the first, which fixes the gauge.
pub fn initialize(
    observed: &[Image],
    seeds: &[Pose],
    model: &CaptureModel,
    params: &EnergyParams,
    config: &SolverConfig,
) -> Result<SequenceState> {
    model.validate()?;
    config.validate()?;
    let frames = observed.len();
    if frames < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: frames });
    }
    if seeds.len() < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: seeds.len() });
    }
    let (lw, lh) = (observed[0].width(), observed[0].height());
    let lr_k = model.lr_intrinsics();
    let mut poses = vec![seeds[0], seeds[1]];
    let mut depth_lr: Vec<Option<InverseDepthMap>> = vec![None; frames];

    let constant = InverseDepthMap::constant(lw, lh, config.init_inverse_depth)?;
    let extrapolated = previous_pose(&poses, 0)?;
    let mut p1 = poses[1];
    depth_lr[1] = Some(register_pair(
        &observed[1], &observed[0], model, &constant, &mut p1, poses[0], None, extrapolated, Refine::Depth, params, config,
    )?);
    let start0 = warp_depth_map(depth_lr[1].as_ref().unwrap(), &poses[1], &poses[0], &lr_k);
    let mut p0 = poses[0];
    depth_lr[0] = Some(register_pair(
        &observed[0], &observed[1], model, &start0, &mut p0, poses[1], Some(extrapolated), poses[0], Refine::Depth, params,
        config,
    )?);

    for t in 2..frames {
        let mut pose_t = match seeds.get(t) {
            Some(p) => *p,
            None => {
                let v = se3_log(&poses[t - 1].compose(&poses[t - 2].inverse()))?;
                se3_exp(&v).compose(&poses[t - 1])
            }
        };
        let prev_depth = depth_lr[t - 1].as_ref().unwrap();
        if config.init_refine_poses {
            // The transported depth fixes the scale of the new pose.
            let start = warp_depth_map(prev_depth, &poses[t - 1], &pose_t, &lr_k);
            register_pair(
                &observed[t],
                &observed[t - 1],
                model,
                &start,
                &mut pose_t,
                poses[t - 1],
                None,
                poses[t - 2],
                Refine::Pose,
                params,
                config,
            )?;
        }
        let start = warp_depth_map(prev_depth, &poses[t - 1], &pose_t, &lr_k);
        let d = register_pair(
            &observed[t],
            &observed[t - 1],
            model,
            &start,
            &mut pose_t,
            poses[t - 1],
            None,
            poses[t - 2],
            Refine::Depth,
            params,
            config,
        )?;
        depth_lr[t] = Some(d);
        poses.push(pose_t);
    }

    let mut depth_lr: Vec<InverseDepthMap> = depth_lr.into_iter().map(|d| d.expect("every frame initialized")).collect();
    if config.init_refine_poses {
        for _ in 0..config.init_joint_iters {
            joint_refine(observed, model, &mut depth_lr, &mut poses, Refine::Pose, params, config)?;
            joint_refine(observed, model, &mut depth_lr, &mut poses, Refine::Depth, params, config)?;
        }
    }

    let latent: Vec<Image> = observed.iter().map(|b| upsample_bicubic(b, model.factor)).collect();
    let depth = depth_lr
        .into_iter()
        .map(|d| {
            let up = upsample_bicubic(&d.to_image(), model.factor);
            InverseDepthMap::from_image(&up.map(|v| v.clamp(config.d_min, config.d_max)))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut state = SequenceState::new(*model, observed.to_vec(), latent, depth, poses, params.neighbor_radius)?;
    state.visibility = update_visibility(&state, params.neighbor_radius);
    Ok(state)
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use crate::synth::{generate, SceneKind, SceneSpec};

    fn small(kind: SceneKind, twists: Vec<Twist>) -> SceneSpec {
        SceneSpec {
            kind,
            width: 64,
            height: 48,
            intrinsics: Intrinsics {
                fx: 50.0,
                fy: 50.0,
                cx: 31.5,
                cy: 23.5,
            },
            twists,
            render_samples: 8,
            noise_sigma: 0.0,
            ..SceneSpec::default()
        }
    }

    fn params() -> EnergyParams {
        EnergyParams {
            lambda_d: 0.2,
            ..EnergyParams::default()
        }
    }

    #[test]
    fn margin_grows_with_the_image() {
        assert_eq!(border_margin(8), 1);
        assert_eq!(border_margin(48), 3);
        assert_eq!(border_margin(96), 6);
    }

    #[test]
    fn static_camera_keeps_identity_poses() {
        let spec = small(SceneKind::Plane, vec![Twist::zero(); 3]);
        let gt = generate(&spec).unwrap();
        let model = spec.capture_model().with_samples(4);
        let state = initialize(&gt.observed, &gt.poses[..2], &model, &params(), &SolverConfig::default()).unwrap();
        for p in &state.poses {
            let xi = se3_log(p).unwrap();
            assert!(xi.norm() < 1e-3, "{}", xi.norm());
        }
    }

    #[test]
    fn box_comes_out_nearer_than_the_background() {
        let step = Twist::from_slice(&[0.04, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let spec = small(SceneKind::BoxOverPlane, vec![Twist::zero(), step, step]);
        let gt = generate(&spec).unwrap();
        let model = spec.capture_model().with_samples(4);
        let state = initialize(&gt.observed, &gt.poses, &model, &params(), &SolverConfig::default()).unwrap();
        let d = &state.depth[1];
        let [x0, y0, x1, y1] = spec.foreground_rect;
        let (w, h) = (d.width() as f64, d.height() as f64);
        let (mut inside, mut outside) = (Vec::new(), Vec::new());
        for y in 0..d.height() {
            for x in 0..d.width() {
                let (u, v) = (x as f64 / w, y as f64 / h);
                let gt_d = gt.depth[1].get(x, y);
                if (u - 0.5).abs() > 0.35 || (v - 0.5).abs() > 0.35 {
                    continue;
                }
                if u > x0 + 0.05 && u < x1 - 0.05 && v > y0 + 0.05 && v < y1 - 0.05 && gt_d > 0.6 {
                    inside.push(d.get(x, y));
                } else if gt_d < 0.5 {
                    outside.push(d.get(x, y));
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(!inside.is_empty() && !outside.is_empty());
        assert!(mean(&inside) > 1.2 * mean(&outside), "{} vs {}", mean(&inside), mean(&outside));
    }

    #[test]
    fn joint_refinement_lowers_the_energy() {
        let step = Twist::from_slice(&[0.04, 0.01, 0.0, 0.0, 0.01, 0.0]);
        let spec = small(SceneKind::TwoPlanes, vec![Twist::zero(), step, step, step]);
        let gt = generate(&spec).unwrap();
        let model = spec.capture_model().with_samples(4);
        let p = params();
        let config = SolverConfig::default();
        let (lw, lh) = (gt.observed[0].width(), gt.observed[0].height());
        let mut depth = vec![InverseDepthMap::constant(lw, lh, 0.5).unwrap(); 4];
        let mut poses = crate::synth::perturb_poses(&gt.poses, 0.005, 3);
        poses[0] = gt.poses[0];
        let before = joint_energy(&gt.observed, &model, &depth, &poses, &p).unwrap();
        joint_refine(&gt.observed, &model, &mut depth, &mut poses, Refine::Depth, &p, &config).unwrap();
        let mid = joint_energy(&gt.observed, &model, &depth, &poses, &p).unwrap();
        joint_refine(&gt.observed, &model, &mut depth, &mut poses, Refine::Pose, &p, &config).unwrap();
        let after = joint_energy(&gt.observed, &model, &depth, &poses, &p).unwrap();
        assert!(mid < before && after <= mid, "{before} {mid} {after}");
        assert_eq!(poses[0], gt.poses[0]);
    }
}
