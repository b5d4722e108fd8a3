//! Joint depth and pose update by linearizing the matching terms around the
//! current structure and solving the IRLS normal equations.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::capture::{sample_times, CaptureGeometry};
use crate::energy::{EdgeWeightMap, EnergyEvaluator, EnergyParams};
use crate::error::Result;
use crate::geometry::{InverseDepthMap, RelativeWarp, Twist};
use crate::imaging::Image;
use crate::solver::normal::{add_tv_product, solve_schur, tv_weights, DepthSystem, FrameBlock};
use crate::solver::{neighbors, SequenceState, SolverConfig};

/// Proposed increments: one inverse-depth field and one left twist per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureDelta {
    pub depth: Vec<Vec<f64>>,
    pub twists: Vec<Twist>,
}

#[derive(Clone, Debug)]
pub struct StructureUpdate {
    pub energy_before: f64,
    pub energy_after: f64,
    pub accepted: bool,
    /// Fraction of the solved step that was applied.
    pub step: f64,
    pub poses_frozen: bool,
    /// The depth solve broke down or produced non-finite values.
    pub breakdown: bool,
    pub delta: StructureDelta,
}

/// Central-difference image gradient, one-sided on the border.
pub(crate) fn central_gradient(img: &Image) -> (Image, Image) {
    let (w, h) = (img.width(), img.height());
    let gx = Image::from_fn(w, h, img.channels(), |x, y, c| {
        let (l, r) = (x.saturating_sub(1), (x + 1).min(w - 1));
        if r == l {
            0.0
        } else {
            (img.get(r, y, c) - img.get(l, y, c)) / (r - l) as f64
        }
    });
    let gy = Image::from_fn(w, h, img.channels(), |x, y, c| {
        let (u, d) = (y.saturating_sub(1), (y + 1).min(h - 1));
        if u == d {
            0.0
        } else {
            (img.get(x, d, c) - img.get(x, u, c)) / (d - u) as f64
        }
    });
    (gx, gy)
}

/// Linearized residual rows of one photometric term of frame `t`: the
/// matching term against `s`, or the self-consistency term when `s == t`.
struct PairRows {
    t: usize,
    /// Energy weight of every row.
    weight: f64,
    lr: Vec<usize>,
    r0: Vec<f64>,
    /// `factor^2` depth coefficients per row.
    a: Vec<f64>,
    /// Pose slots the rows depend on.
    slots: Vec<usize>,
    /// `slots.len()` twist coefficients per row.
    b: Vec<[f64; 6]>,
}

/// Chain-rule coefficients `(slot, per-sample source factor, per-sample
/// destination factor)` of the warps from the exposure samples of `t` into `s`.
///
/// A left twist on `P_t` moves sample `m` by roughly `alpha_m` times the twist
/// and one on the preceding pose by `1 - alpha_m` times it; frame 0 precedes
/// itself by extrapolation, so its preceding pose moves against frame 1.
fn slot_factors(t: usize, s: usize, frames: usize, alphas: &[f64]) -> Vec<(usize, Vec<f64>, Vec<f64>)> {
    let mut out: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut add = |slot: usize, src: Vec<f64>, dst: Vec<f64>| match out.iter_mut().find(|e| e.0 == slot) {
        Some(e) => {
            e.1.iter_mut().zip(&src).for_each(|(a, b)| *a += b);
            e.2.iter_mut().zip(&dst).for_each(|(a, b)| *a += b);
        }
        None => out.push((slot, src, dst)),
    };
    let m = alphas.len();
    if let Some(q) = slot(t) {
        add(q, alphas.to_vec(), vec![if s == t { 1.0 } else { 0.0 }; m]);
    }
    match slot(t) {
        Some(q) if q > 0 => add(q - 1, alphas.iter().map(|a| 1.0 - a).collect(), vec![0.0; m]),
        Some(_) => {}
        None if frames > 1 => add(0, alphas.iter().map(|a| a - 1.0).collect(), vec![0.0; m]),
        None => {}
    }
    if s != t {
        if let Some(q) = slot(s) {
            add(q, vec![0.0; m], vec![1.0; m]);
        }
    }
    out.retain(|e| e.1.iter().chain(&e.2).any(|v| *v != 0.0));
    out.sort_by_key(|e| e.0);
    out
}

fn linearize_pair(state: &SequenceState, geom: &CaptureGeometry, t: usize, s: usize, weight: f64) -> PairRows {
    let model = geom.model();
    let f = model.factor;
    let m_total = model.samples;
    let (w, _) = geom.hr_size();
    let (lw, lh) = geom.lr_size();
    let n = geom.hr_size().0 * geom.hr_size().1;
    let ch = state.observed[t].channels();
    let pos = geom.positions(&state.poses[s]);
    let (pred, valid) = geom.apply_with_positions(&state.latent[s], &pos);
    let (gx, gy) = central_gradient(&state.latent[s]);
    let warps: Vec<RelativeWarp> = geom
        .sample_poses()
        .iter()
        .map(|p| RelativeWarp::new(p, &state.poses[s], &model.intrinsics))
        .collect();
    let depths = geom.sample_depths();
    let factors = slot_factors(t, s, state.frames(), &sample_times(model, 1.0, 0.0));
    let ns = factors.len();
    let mask = if s == t { None } else { state.mask(t, s) };
    let norm = 1.0 / (m_total * f * f) as f64;

    let per_row: Vec<(Vec<usize>, Vec<f64>, Vec<f64>, Vec<[f64; 6]>)> = (0..lh)
        .into_par_iter()
        .map(|ly| {
            let (mut lr, mut r0, mut av, mut bv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            let mut sx = [0.0; 3];
            let mut sy = [0.0; 3];
            for lx in 0..lw {
                let p = ly * lw + lx;
                if !valid.data[p] || mask.is_some_and(|m| !m.data[p]) {
                    continue;
                }
                let mut a = vec![0.0; ch * f * f];
                let mut b = vec![[0.0; 6]; ch * ns];
                for k in 0..f * f {
                    let (x, y) = (lx * f + k % f, ly * f + k / f);
                    let i = y * w + x;
                    for m in 0..m_total {
                        let Some(jac) = warps[m].jacobians(x as f64, y as f64, depths[m].data()[i]) else {
                            continue;
                        };
                        let [u, v] = pos[m * n + i];
                        gx.sample_into(u, v, &mut sx[..ch]);
                        gy.sample_into(u, v, &mut sy[..ch]);
                        for c in 0..ch {
                            let (g0, g1) = (sx[c] * norm, sy[c] * norm);
                            a[c * f * f + k] += g0 * jac.du_dd[0] + g1 * jac.du_dd[1];
                            for (q, (_, src, dst)) in factors.iter().enumerate() {
                                let (cs, cd) = (src[m], dst[m]);
                                let row = &mut b[c * ns + q];
                                for j in 0..6 {
                                    let js = g0 * jac.du_deps_src[(0, j)] + g1 * jac.du_deps_src[(1, j)];
                                    let jd = g0 * jac.du_deps_dst[(0, j)] + g1 * jac.du_deps_dst[(1, j)];
                                    row[j] += cs * js + cd * jd;
                                }
                            }
                        }
                    }
                }
                for c in 0..ch {
                    lr.push(p);
                    r0.push(state.observed[t].data()[p * ch + c] - pred.data()[p * ch + c]);
                    av.extend_from_slice(&a[c * f * f..(c + 1) * f * f]);
                    bv.extend_from_slice(&b[c * ns..(c + 1) * ns]);
                }
            }
            (lr, r0, av, bv)
        })
        .collect();
    let mut all = PairRows {
        t,
        weight,
        lr: Vec::new(),
        r0: Vec::new(),
        a: Vec::new(),
        slots: factors.iter().map(|e| e.0).collect(),
        b: Vec::new(),
    };
    for (lr, r0, a, b) in per_row {
        all.lr.extend(lr);
        all.r0.extend(r0);
        all.a.extend(a);
        all.b.extend(b);
    }
    all
}

/// Pose slot of frame `t`; frame 0 fixes the gauge and has none.
fn slot(t: usize) -> Option<usize> {
    t.checked_sub(1)
}

struct FrameAssembly {
    block: FrameBlock,
    hpp: DMatrix<f64>,
    gp: DVector<f64>,
}

#[allow(clippy::too_many_arguments)]
fn assemble_frame(
    t: usize,
    rows: &[&PairRows],
    state: &SequenceState,
    weights: &EdgeWeightMap,
    delta: &[f64],
    twists: &[[f64; 6]],
    params: &EnergyParams,
    config: &SolverConfig,
) -> FrameAssembly {
    let f = state.model.factor;
    let bb = f * f;
    let depth = &state.depth[t];
    let (w, h) = (depth.width(), depth.height());
    let lw = w / f;
    let slots = twists.len();
    let tiles = (w / f) * (h / f);
    let mut blocks = vec![0.0; tiles * bb * bb];
    let mut rhs = vec![0.0; w * h];
    let mut coupling: Vec<Option<Vec<[f64; 6]>>> = vec![None; slots];
    let mut hpp = DMatrix::zeros(6 * slots, 6 * slots);
    let mut gp = DVector::zeros(6 * slots);
    let mut pix = vec![0; bb];

    for pr in rows {
        let ns = pr.slots.len();
        for &q in &pr.slots {
            coupling[q].get_or_insert_with(|| vec![[0.0; 6]; w * h]);
        }
        for r in 0..pr.r0.len() {
            let p = pr.lr[r];
            let (lx, ly) = (p % lw, p / lw);
            for k in 0..bb {
                pix[k] = (ly * f + k / f) * w + lx * f + k % f;
            }
            let a = &pr.a[r * bb..(r + 1) * bb];
            let b = &pr.b[r * ns..(r + 1) * ns];
            let mut lin = 0.0;
            for k in 0..bb {
                lin += a[k] * delta[pix[k]];
            }
            for (q, bq) in pr.slots.iter().zip(b) {
                for j in 0..6 {
                    lin += bq[j] * twists[*q][j];
                }
            }
            let r0 = pr.r0[r];
            let wr = pr.weight / (r0 - lin).abs().max(config.irls_epsilon);

            let tile = &mut blocks[p * bb * bb..(p + 1) * bb * bb];
            for i in 0..bb {
                for j in 0..bb {
                    tile[i * bb + j] += wr * a[i] * a[j];
                }
                rhs[pix[i]] += wr * a[i] * r0;
            }
            for (&q, bq) in pr.slots.iter().zip(b) {
                let col = coupling[q].as_mut().unwrap();
                for i in 0..bb {
                    for j in 0..6 {
                        col[pix[i]][j] += wr * a[i] * bq[j];
                    }
                }
                for j in 0..6 {
                    gp[q * 6 + j] += wr * bq[j] * r0;
                }
            }
            for (&qa, ba) in pr.slots.iter().zip(b) {
                for (&qb, bb_) in pr.slots.iter().zip(b) {
                    for i in 0..6 {
                        for j in 0..6 {
                            hpp[(qa * 6 + i, qb * 6 + j)] += wr * ba[i] * bb_[j];
                        }
                    }
                }
            }
        }
    }

    let current: Vec<f64> = depth.data().iter().zip(delta).map(|(d, e)| d + e).collect();
    let tv = if params.lambda_d > 0.0 {
        tv_weights(w, h, &current, |p| params.lambda_d * weights.data[p], config.tv_beta, config.irls_epsilon)
    } else {
        vec![0.0; w * h]
    };
    let mut lap = vec![0.0; w * h];
    add_tv_product(w, h, &tv, depth.data(), &mut lap);
    for (r, l) in rhs.iter_mut().zip(&lap) {
        *r -= l;
    }
    let system = DepthSystem::new(w, h, f, blocks, tv, config.step_damping);
    let couplings = coupling
        .into_iter()
        .enumerate()
        .filter_map(|(q, c)| c.map(|c| (q, c)))
        .collect();
    FrameAssembly {
        block: FrameBlock {
            system,
            rhs,
            couplings,
        },
        hpp,
        gp,
    }
}

fn linearize(state: &SequenceState, geometries: &[CaptureGeometry], params: &EnergyParams) -> Vec<PairRows> {
    let mut terms: Vec<(usize, usize, f64)> = Vec::new();
    for t in 0..state.frames() {
        for s in neighbors(t, state.frames(), params.neighbor_radius) {
            terms.push((t, s, 1.0));
        }
        if params.lambda_s > 0.0 {
            terms.push((t, t, params.lambda_s));
        }
    }
    terms
        .iter()
        .map(|&(t, s, weight)| linearize_pair(state, &geometries[t], t, s, weight))
        .collect()
}

/// Runs the IRLS reweightings of one linearization and returns the solved increment.
fn solve_increment(
    state: &SequenceState,
    rows: &[PairRows],
    weights: &[EdgeWeightMap],
    params: &EnergyParams,
    config: &SolverConfig,
    reweightings: usize,
) -> (Vec<Vec<f64>>, Vec<[f64; 6]>, bool, bool) {
    let frames = state.frames();
    let slots = frames - 1;
    let mut delta: Vec<Vec<f64>> = state.depth.iter().map(|d| vec![0.0; d.data().len()]).collect();
    let mut twists = vec![[0.0; 6]; slots];
    let mut frozen = false;
    let mut breakdown = false;
    for _ in 0..reweightings {
        let assembled: Vec<FrameAssembly> = (0..frames)
            .into_par_iter()
            .map(|t| {
                let mine: Vec<&PairRows> = rows.iter().filter(|r| r.t == t).collect();
                assemble_frame(t, &mine, state, &weights[t], &delta[t], &twists, params, config)
            })
            .collect();
        let mut hpp = DMatrix::zeros(6 * slots, 6 * slots);
        let mut gp = DVector::zeros(6 * slots);
        let mut blocks = Vec::with_capacity(frames);
        for a in assembled {
            hpp += a.hpp;
            gp += a.gp;
            blocks.push(a.block);
        }
        let sol = solve_schur(&blocks, &hpp, &gp, config.step_damping, config.cg_iters, config.cg_tol);
        frozen |= sol.poses_frozen;
        breakdown |= sol.breakdown;
        if sol.depth.iter().flatten().any(|v| !v.is_finite()) {
            breakdown = true;
            break;
        }
        delta = sol.depth;
        twists = sol.poses;
    }
    (delta, twists, frozen, breakdown)
}

fn apply_step(state: &SequenceState, delta: &[Vec<f64>], twists: &[[f64; 6]], alpha: f64, config: &SolverConfig) -> Result<SequenceState> {
    let mut next = state.clone();
    for t in 0..state.frames() {
        let d = &state.depth[t];
        let data = d
            .data()
            .iter()
            .zip(&delta[t])
            .map(|(v, e)| (v + alpha * e).clamp(config.d_min, config.d_max))
            .collect();
        next.depth[t] = InverseDepthMap::new(d.width(), d.height(), data)?;
        if let Some(q) = slot(t) {
            let eps = Twist::from_slice(&twists[q]).scale(alpha);
            next.poses[t] = state.poses[t].perturb(&eps);
        }
    }
    Ok(next)
}

fn total(state: &SequenceState, params: &EnergyParams, weights: &[EdgeWeightMap]) -> Result<f64> {
    Ok(EnergyEvaluator::with_weights(state, params, weights.to_vec())?.total()?.total)
}

/// One linearize-solve-accept cycle. On acceptance `state` holds the new structure.
fn structure_step(
    state: &mut SequenceState,
    params: &EnergyParams,
    config: &SolverConfig,
    weights: &[EdgeWeightMap],
    reweightings: usize,
) -> Result<StructureUpdate> {
    let geometries = state.capture_geometries()?;
    let before = total(state, params, weights)?;
    let rows = linearize(state, &geometries, params);
    let (delta, twists, frozen, breakdown) = solve_increment(state, &rows, weights, params, config, reweightings);
    let mut outcome = StructureUpdate {
        energy_before: before,
        energy_after: before,
        accepted: false,
        step: 0.0,
        poses_frozen: frozen,
        breakdown,
        delta: StructureDelta {
            depth: delta.clone(),
            twists: std::iter::once(Twist::zero())
                .chain(twists.iter().map(|t| Twist::from_slice(t)))
                .collect(),
        },
    };
    let finite = delta.iter().flatten().chain(twists.iter().flatten()).all(|v| v.is_finite());
    if !finite {
        return Ok(outcome);
    }
    let mut alpha = 1.0;
    for _ in 0..=config.max_halvings {
        let Ok(candidate) = apply_step(state, &delta, &twists, alpha, config) else {
            alpha *= 0.5;
            continue;
        };
        if let Ok(e) = total(&candidate, params, weights) {
            if e <= before {
                *state = candidate;
                outcome.accepted = true;
                outcome.step = alpha;
                outcome.energy_after = e;
                return Ok(outcome);
            }
        }
        alpha *= 0.5;
    }
    Ok(outcome)
}

/// Updates all inverse-depth maps and poses (frame 0 fixed) with visibility
/// and latent images held fixed. The true energy never increases.
pub fn update_structure(
    state: &mut SequenceState,
    params: &EnergyParams,
    config: &SolverConfig,
    weights: &[EdgeWeightMap],
) -> Result<Vec<StructureUpdate>> {
    if config.relinearize_inner {
        (0..config.irls_inner)
            .map(|_| structure_step(state, params, config, weights, 1))
            .collect()
    } else {
        Ok(vec![structure_step(state, params, config, weights, config.irls_inner)?])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Intrinsics;
    use crate::synth::{generate, SceneSpec};

    #[test]
    fn central_gradient_of_ramp() {
        let img = Image::from_fn(5, 4, 1, |x, y, _| 2.0 * x as f64 - 0.5 * y as f64);
        let (gx, gy) = central_gradient(&img);
        assert!(gx.data().iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(gy.data().iter().all(|v| (v + 0.5).abs() < 1e-12));
    }

    fn small_state() -> SequenceState {
        let spec = SceneSpec {
            width: 64,
            height: 48,
            intrinsics: Intrinsics::new(50.0, 50.0, 31.5, 23.5).unwrap(),
            render_samples: 8,
            noise_sigma: 0.0,
            ..SceneSpec::default()
        };
        let gt = generate(&spec).unwrap();
        let model = spec.capture_model();
        SequenceState::new(model, gt.observed, gt.latent, gt.depth, gt.poses, 1).unwrap()
    }

    fn predicted(state: &SequenceState, t: usize, s: usize) -> (Vec<f64>, Vec<bool>) {
        let geom = state.capture_geometry(t).unwrap();
        let (img, valid) = geom.apply(&state.latent[s], &state.poses[s]).unwrap();
        (img.into_data(), valid.data)
    }

    // Compares the linear model of one term with the finite-difference change
    // of the prediction, over rows valid before and after.
    fn relative_model_error(state: &SequenceState, t: usize, s: usize, perturb: &dyn Fn(&mut SequenceState), lin: &dyn Fn(&PairRows, usize) -> f64) -> f64 {
        let geom = state.capture_geometry(t).unwrap();
        let rows = linearize_pair(state, &geom, t, s, 1.0);
        let (p0, _) = predicted(state, t, s);
        let mut moved = state.clone();
        perturb(&mut moved);
        let (p1, v1) = predicted(&moved, t, s);
        let ch = state.observed[t].channels();
        let (mut num, mut den) = (0.0, 0.0);
        for r in 0..rows.r0.len() {
            let p = rows.lr[r];
            if !v1[p] {
                continue;
            }
            let c = r % ch;
            let actual = p1[p * ch + c] - p0[p * ch + c];
            num += (actual - lin(&rows, r)).powi(2);
            den += actual.powi(2);
        }
        assert!(den > 0.0);
        (num / den).sqrt()
    }

    #[test]
    fn linear_model_tracks_depth_and_pose_changes() {
        let state = small_state();
        let bb = state.model.factor * state.model.factor;
        let w = state.depth[0].width();
        let lw = w / state.model.factor;
        let f = state.model.factor;
        let bump = |i: usize| 2e-3 * (1.0 + ((i % w) as f64 * 0.2).sin());
        for (t, s) in [(2, 1), (2, 3), (2, 2), (0, 0), (0, 1)] {
            let depth_err = relative_model_error(
                &state,
                t,
                s,
                &|st: &mut SequenceState| {
                    let d = &st.depth[t];
                    let data = d.data().iter().enumerate().map(|(i, v)| v + bump(i)).collect();
                    st.depth[t] = InverseDepthMap::new(d.width(), d.height(), data).unwrap();
                },
                &|rows: &PairRows, r: usize| {
                    let p = rows.lr[r];
                    let (lx, ly) = (p % lw, p / lw);
                    (0..bb)
                        .map(|k| rows.a[r * bb + k] * bump((ly * f + k / f) * w + lx * f + k % f))
                        .sum()
                },
            );
            assert!(depth_err < 0.45, "depth model error {depth_err} for ({t}, {s})");
            let geom = state.capture_geometry(t).unwrap();
            let slots = linearize_pair(&state, &geom, t, s, 1.0).slots;
            for (qi, &q) in slots.iter().enumerate() {
                let eps = [2e-4, -1e-4, 1.5e-4, 3e-4, 2e-4, -2e-4];
                let pose_err = relative_model_error(
                    &state,
                    t,
                    s,
                    &|st: &mut SequenceState| {
                        st.poses[q + 1] = st.poses[q + 1].perturb(&Twist::from_slice(&eps));
                    },
                    &|rows: &PairRows, r: usize| {
                        let b = rows.b[r * rows.slots.len() + qi];
                        (0..6).map(|j| b[j] * eps[j]).sum()
                    },
                );
                assert!(pose_err < 0.45, "pose model error {pose_err} for ({t}, {s}) slot {q}");
            }
        }
    }
}

