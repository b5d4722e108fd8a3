//! Latent-image update: with structure fixed every term depending on `I_t`
//! is an L1 norm of a linear function of `I_t` or its isotropic TV.

use rayon::prelude::*;

use crate::capture::{CaptureGeometry, SparseLinearOperator};
use crate::energy::{image_tv, EnergyParams};
use crate::error::Result;
use crate::imaging::Image;
use crate::linalg::conjugate_gradient;
use crate::solver::normal::{add_tv_product, tv_weights};
use crate::solver::{neighbors, SequenceState, SolverConfig};

/// L1 data rows `weight * |target - A x|` restricted to `active` rows.
struct DataBlock {
    op: SparseLinearOperator,
    target: Image,
    active: Vec<bool>,
    weight: f64,
}

#[derive(Clone, Debug)]
pub struct ImageUpdate {
    pub image: Image,
    pub objective_before: f64,
    pub objective_after: f64,
    /// The IRLS iterates never improved the objective; the input was kept.
    pub kept_previous: bool,
    pub breakdown: bool,
    pub cg_iterations: usize,
}

fn data_blocks(
    t: usize,
    state: &SequenceState,
    geometries: &[CaptureGeometry],
    params: &EnergyParams,
) -> Vec<DataBlock> {
    let pose_t = state.poses[t];
    let mut blocks = Vec::new();
    for s in neighbors(t, state.frames(), params.neighbor_radius) {
        // Frame s observes I_t through its own exposure.
        let op = geometries[s].operator(&pose_t);
        let active = match state.mask(s, t) {
            Some(m) => op.valid().iter().zip(&m.data).map(|(a, b)| *a && *b).collect(),
            None => op.valid().to_vec(),
        };
        blocks.push(DataBlock {
            op,
            target: state.observed[s].clone(),
            active,
            weight: 1.0,
        });
    }
    if params.lambda_s > 0.0 {
        let op = geometries[t].operator(&pose_t);
        let active = op.valid().to_vec();
        blocks.push(DataBlock {
            op,
            target: state.observed[t].clone(),
            active,
            weight: params.lambda_s,
        });
    }
    blocks
}

fn channel_target(img: &Image, c: usize) -> Vec<f64> {
    let ch = img.channels();
    img.data().iter().skip(c).step_by(ch).copied().collect()
}

fn objective(blocks: &[DataBlock], planes: &[Vec<f64>], targets: &[Vec<Vec<f64>>], lambda_i: f64, img: &Image) -> f64 {
    let mut acc = 0.0;
    for (c, x) in planes.iter().enumerate() {
        for (b, block) in blocks.iter().enumerate() {
            let y = block.op.matrix().mul_vec(x);
            let mut sum = 0.0;
            for (r, yr) in y.iter().enumerate() {
                if block.active[r] {
                    sum += (targets[b][c][r] - yr).abs();
                }
            }
            acc += block.weight * sum;
        }
    }
    acc + lambda_i * image_tv(img)
}

/// One IRLS solve for a single channel, warm-started at `x`.
fn solve_channel(
    blocks: &[DataBlock],
    targets: &[Vec<f64>],
    x: &mut [f64],
    width: usize,
    height: usize,
    params: &EnergyParams,
    config: &SolverConfig,
) -> (usize, bool) {
    let n = x.len();
    let eps = config.irls_epsilon;
    let mut weights = Vec::with_capacity(blocks.len());
    let mut rhs = vec![0.0; n];
    let mut diag = vec![0.0; n];
    for (block, target) in blocks.iter().zip(targets) {
        let m = block.op.matrix();
        let y = m.mul_vec(x);
        let w: Vec<f64> = (0..y.len())
            .map(|r| {
                if block.active[r] {
                    block.weight / (target[r] - y[r]).abs().max(eps)
                } else {
                    0.0
                }
            })
            .collect();
        for r in 0..y.len() {
            if w[r] == 0.0 {
                continue;
            }
            for (j, a) in m.row(r) {
                rhs[j] += w[r] * a * target[r];
                diag[j] += w[r] * a * a;
            }
        }
        weights.push(w);
    }
    let tv = if params.lambda_i > 0.0 {
        tv_weights(width, height, x, |_| params.lambda_i, config.tv_beta, eps)
    } else {
        vec![0.0; n]
    };
    for y in 0..height {
        for xx in 0..width {
            let p = y * width + xx;
            if xx + 1 < width {
                diag[p] += tv[p];
                diag[p + 1] += tv[p];
            }
            if y + 1 < height {
                diag[p] += tv[p];
                diag[p + width] += tv[p];
            }
        }
    }
    let apply = |v: &[f64], out: &mut [f64]| {
        out.fill(0.0);
        for (block, w) in blocks.iter().zip(&weights) {
            let m = block.op.matrix();
            let mut y = m.mul_vec(v);
            for (yr, wr) in y.iter_mut().zip(w) {
                *yr *= wr;
            }
            for (r, yr) in y.iter().enumerate() {
                if *yr != 0.0 {
                    for (j, a) in m.row(r) {
                        out[j] += a * yr;
                    }
                }
            }
        }
        add_tv_product(width, height, &tv, v, out);
    };
    let report = conjugate_gradient(apply, &rhs, x, Some(&diag), config.cg_iters, config.cg_tol);
    (report.iterations, report.breakdown)
}

/// Minimizes the part of the energy depending on `I_t` with structure fixed.
pub fn update_image(
    t: usize,
    state: &SequenceState,
    geometries: &[CaptureGeometry],
    params: &EnergyParams,
    config: &SolverConfig,
) -> Result<ImageUpdate> {
    let current = &state.latent[t];
    let (w, h, ch) = (current.width(), current.height(), current.channels());
    let blocks = data_blocks(t, state, geometries, params);
    let targets: Vec<Vec<Vec<f64>>> = blocks
        .iter()
        .map(|b| (0..ch).map(|c| channel_target(&b.target, c)).collect())
        .collect();
    let planes: Vec<Vec<f64>> = (0..ch).map(|c| channel_target(current, c)).collect();
    let before = objective(&blocks, &planes, &targets, params.lambda_i, current);

    let mut best = (before, planes.clone());
    let mut x = planes;
    let mut iterations = 0;
    let mut breakdown = false;
    for _ in 0..config.irls_inner {
        let results: Vec<(Vec<f64>, usize, bool)> = x
            .par_iter()
            .enumerate()
            .map(|(c, xc)| {
                let mut xc = xc.clone();
                let tg: Vec<Vec<f64>> = targets.iter().map(|tb| tb[c].clone()).collect();
                let (it, bd) = solve_channel(&blocks, &tg, &mut xc, w, h, params, config);
                (xc, it, bd)
            })
            .collect();
        let mut next = Vec::with_capacity(ch);
        for (xc, it, bd) in results {
            iterations += it;
            breakdown |= bd;
            next.push(xc);
        }
        if next.iter().flatten().any(|v| !v.is_finite()) {
            breakdown = true;
            break;
        }
        x = next;
        let img = interleave(&x, w, h);
        let obj = objective(&blocks, &x, &targets, params.lambda_i, &img);
        if obj < best.0 {
            best = (obj, x.clone());
        }
    }
    let kept_previous = best.0 >= before;
    let image = if kept_previous { current.clone() } else { interleave(&best.1, w, h) };
    Ok(ImageUpdate {
        image,
        objective_before: before,
        objective_after: best.0.min(before),
        kept_previous,
        breakdown,
        cg_iterations: iterations,
    })
}

fn interleave(planes: &[Vec<f64>], w: usize, h: usize) -> Image {
    let ch = planes.len();
    Image::from_fn(w, h, ch, |x, y, c| planes[c][y * w + x])
}
