//! Damped normal equations over per-pixel inverse depths and per-frame
//! twists, solved by eliminating the depths.
//!
//! Each frame's depth block couples pixels only inside `block x block` tiles
//! (the footprint of one observed pixel) and through the TV stencil, so it is
//! solved matrix-free by block-preconditioned CG.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::linalg::{preconditioned_cg, CgReport};

/// Absolute diagonal floor keeping every system positive definite.
const DIAGONAL_FLOOR: f64 = 1e-9;

pub(crate) struct DepthSystem {
    pub width: usize,
    pub height: usize,
    pub block: usize,
    /// Dense `block^2 x block^2` matrices, one per tile, row-major.
    pub blocks: Vec<f64>,
    /// Per-pixel weight of the quadratic TV stencil.
    pub tv: Vec<f64>,
    extra: Vec<f64>,
    precond: Vec<f64>,
}

impl DepthSystem {
    pub fn new(width: usize, height: usize, block: usize, blocks: Vec<f64>, tv: Vec<f64>, damping: f64) -> Self {
        let bb = block * block;
        let mut sys = DepthSystem {
            width,
            height,
            block,
            blocks,
            tv,
            extra: Vec::new(),
            precond: Vec::new(),
        };
        let mut diag = vec![0.0; width * height];
        sys.tv_diagonal(&mut diag);
        let tiles = (width / block) * (height / block);
        let mut pixel_of = vec![0; bb];
        for b in 0..tiles {
            sys.tile_pixels(b, &mut pixel_of);
            for k in 0..bb {
                diag[pixel_of[k]] += sys.blocks[b * bb * bb + k * bb + k];
            }
        }
        sys.extra = diag.iter().map(|d| damping * d + DIAGONAL_FLOOR).collect();

        let mut precond = vec![0.0; tiles * bb * bb];
        let mut tvd = vec![0.0; width * height];
        sys.tv_diagonal(&mut tvd);
        for b in 0..tiles {
            sys.tile_pixels(b, &mut pixel_of);
            let mut m = DMatrix::from_row_slice(bb, bb, &sys.blocks[b * bb * bb..(b + 1) * bb * bb]);
            for k in 0..bb {
                m[(k, k)] += tvd[pixel_of[k]] + sys.extra[pixel_of[k]];
            }
            let inv = match m.clone().cholesky() {
                Some(c) => c.inverse(),
                None => DMatrix::from_diagonal(&m.diagonal().map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })),
            };
            for r in 0..bb {
                for c in 0..bb {
                    precond[b * bb * bb + r * bb + c] = inv[(r, c)];
                }
            }
        }
        sys.precond = precond;
        sys
    }

    #[cfg(test)]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    fn tile_pixels(&self, b: usize, out: &mut [usize]) {
        let f = self.block;
        let tw = self.width / f;
        let (bx, by) = (b % tw, b / tw);
        for k in 0..f * f {
            out[k] = (by * f + k / f) * self.width + bx * f + k % f;
        }
    }

    fn tv_diagonal(&self, diag: &mut [f64]) {
        let (w, h) = (self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let c = self.tv[p];
                if x + 1 < w {
                    diag[p] += c;
                    diag[p + 1] += c;
                }
                if y + 1 < h {
                    diag[p] += c;
                    diag[p + w] += c;
                }
            }
        }
    }

    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        add_tv_product(self.width, self.height, &self.tv, v, out);
        let bb = self.block * self.block;
        let mut pix = vec![0; bb];
        for b in 0..self.blocks.len() / (bb * bb) {
            self.tile_pixels(b, &mut pix);
            let m = &self.blocks[b * bb * bb..(b + 1) * bb * bb];
            for r in 0..bb {
                let mut acc = 0.0;
                for c in 0..bb {
                    acc += m[r * bb + c] * v[pix[c]];
                }
                out[pix[r]] += acc;
            }
        }
        for i in 0..v.len() {
            out[i] += self.extra[i] * v[i];
        }
    }

    fn precondition(&self, r: &[f64], z: &mut [f64]) {
        let bb = self.block * self.block;
        let mut pix = vec![0; bb];
        for b in 0..self.precond.len() / (bb * bb) {
            self.tile_pixels(b, &mut pix);
            let m = &self.precond[b * bb * bb..(b + 1) * bb * bb];
            for row in 0..bb {
                let mut acc = 0.0;
                for c in 0..bb {
                    acc += m[row * bb + c] * r[pix[c]];
                }
                z[pix[row]] = acc;
            }
        }
    }

    pub fn solve(&self, rhs: &[f64], max_iter: usize, tol: f64) -> (Vec<f64>, CgReport) {
        let mut x = vec![0.0; rhs.len()];
        let report = preconditioned_cg(
            |v, o| self.apply(v, o),
            |r, z| self.precondition(r, z),
            rhs,
            &mut x,
            max_iter,
            tol,
        );
        (x, report)
    }
}

/// `out += D^T diag(c) D v` for the forward-difference gradient `D`.
pub(crate) fn add_tv_product(w: usize, h: usize, c: &[f64], v: &[f64], out: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                let g = c[p] * (v[p + 1] - v[p]);
                out[p + 1] += g;
                out[p] -= g;
            }
            if y + 1 < h {
                let g = c[p] * (v[p + w] - v[p]);
                out[p + w] += g;
                out[p] -= g;
            }
        }
    }
}

/// IRLS weights `scale(p) / max(sqrt(|grad v|^2 + beta^2), eps)` of an isotropic TV term.
pub(crate) fn tv_weights(w: usize, h: usize, v: &[f64], scale: impl Fn(usize) -> f64, beta: f64, eps: f64) -> Vec<f64> {
    (0..w * h)
        .map(|p| {
            let (x, y) = (p % w, p / w);
            let gx = if x + 1 < w { v[p + 1] - v[p] } else { 0.0 };
            let gy = if y + 1 < h { v[p + w] - v[p] } else { 0.0 };
            scale(p) / (gx * gx + gy * gy + beta * beta).sqrt().max(eps)
        })
        .collect()
}

/// One frame's depth block with its coupling to pose slots.
pub(crate) struct FrameBlock {
    pub system: DepthSystem,
    pub rhs: Vec<f64>,
    /// `(slot, H_dp)` with one 6-vector per depth pixel.
    pub couplings: Vec<(usize, Vec<[f64; 6]>)>,
}

pub(crate) struct SchurSolution {
    pub depth: Vec<Vec<f64>>,
    /// One twist per pose slot.
    pub poses: Vec<[f64; 6]>,
    pub poses_frozen: bool,
    pub breakdown: bool,
}

/// Solves the arrowhead system by eliminating the depth blocks.
pub(crate) fn solve_schur(
    frames: &[FrameBlock],
    hpp: &DMatrix<f64>,
    gp: &DVector<f64>,
    pose_damping: f64,
    cg_iters: usize,
    cg_tol: f64,
) -> SchurSolution {
    let slots = gp.len() / 6;
    // Column 6 * k + j of frame f, or the right-hand side when k == couplings.len().
    let jobs: Vec<(usize, usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(f, fb)| {
            let n = fb.couplings.len();
            (0..n)
                .flat_map(move |k| (0..6).map(move |j| (f, k, j)))
                .chain(std::iter::once((f, n, 0)))
        })
        .collect();
    let solved: Vec<(Vec<f64>, CgReport)> = jobs
        .par_iter()
        .map(|&(f, k, j)| {
            let fb = &frames[f];
            if k == fb.couplings.len() {
                fb.system.solve(&fb.rhs, cg_iters, cg_tol)
            } else {
                let col: Vec<f64> = fb.couplings[k].1.iter().map(|c| c[j]).collect();
                fb.system.solve(&col, cg_iters, cg_tol)
            }
        })
        .collect();
    let breakdown = solved.iter().any(|s| s.1.breakdown);

    let mut cols: Vec<Vec<Vec<f64>>> = frames.iter().map(|_| Vec::new()).collect();
    let mut xg: Vec<Vec<f64>> = frames.iter().map(|_| Vec::new()).collect();
    for ((f, k, _), (x, _)) in jobs.iter().zip(solved) {
        if *k == frames[*f].couplings.len() {
            xg[*f] = x;
        } else {
            cols[*f].push(x);
        }
    }

    let mut s = hpp.clone();
    let mut r = gp.clone();
    for i in 0..6 * slots {
        s[(i, i)] += pose_damping * s[(i, i)] + DIAGONAL_FLOOR;
    }
    for (f, fb) in frames.iter().enumerate() {
        for (qa, ca) in &fb.couplings {
            for i in 0..6 {
                let ci: Vec<f64> = ca.iter().map(|c| c[i]).collect();
                r[qa * 6 + i] -= dot(&ci, &xg[f]);
                for (kb, (qb, _)) in fb.couplings.iter().enumerate() {
                    for j in 0..6 {
                        s[(qa * 6 + i, qb * 6 + j)] -= dot(&ci, &cols[f][kb * 6 + j]);
                    }
                }
            }
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    let solution = if slots == 0 {
        Some(DVector::zeros(0))
    } else {
        s.cholesky().map(|c| c.solve(&r)).filter(|x| x.iter().all(|v| v.is_finite()))
    };
    let poses_frozen = solution.is_none();
    let dp = solution.unwrap_or_else(|| DVector::zeros(6 * slots));

    let depth = frames
        .iter()
        .enumerate()
        .map(|(f, fb)| {
            let mut d = xg[f].clone();
            if !poses_frozen {
                for (k, (q, _)) in fb.couplings.iter().enumerate() {
                    for j in 0..6 {
                        let coef = dp[q * 6 + j];
                        for (di, ci) in d.iter_mut().zip(&cols[f][k * 6 + j]) {
                            *di -= coef * ci;
                        }
                    }
                }
            }
            d
        })
        .collect();
    let poses = (0..slots)
        .map(|q| std::array::from_fn(|j| dp[q * 6 + j]))
        .collect();
    SchurSolution {
        depth,
        poses,
        poses_frozen,
        breakdown,
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
