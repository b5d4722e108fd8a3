//! Reconstruction metrics: latent-image PSNR, scale-aligned depth PSNR and
//! relative error, and absolute trajectory error after similarity alignment.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{InverseDepthMap, Pose};
use crate::imaging::{psnr, Image};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthError {
    pub psnr: f64,
    pub rel: f64,
    /// Scale applied to the estimate before comparison.
    pub scale: f64,
}

/// Compares inverse depths inside a centered crop keeping `crop_fraction` of
/// each side, after fitting one positive least-squares scale.
pub fn depth_error(est: &InverseDepthMap, gt: &InverseDepthMap, crop_fraction: f64) -> Result<DepthError> {
    let (w, h) = (gt.width(), gt.height());
    if (est.width(), est.height()) != (w, h) {
        return Err(Error::DimensionMismatch(format!(
            "depth {}x{} vs ground truth {w}x{h}",
            est.width(),
            est.height()
        )));
    }
    if !(crop_fraction > 0.0 && crop_fraction <= 1.0) {
        return Err(Error::invalid("crop fraction must lie in (0, 1]"));
    }
    let cw = ((w as f64 * crop_fraction).round() as usize).clamp(1, w);
    let ch = ((h as f64 * crop_fraction).round() as usize).clamp(1, h);
    let (ox, oy) = ((w - cw) / 2, (h - ch) / 2);
    let mut pairs = Vec::with_capacity(cw * ch);
    for y in oy..oy + ch {
        for x in ox..ox + cw {
            let g = gt.get(x, y);
            if !(g > 0.0) {
                return Err(Error::invalid("ground-truth inverse depth must be positive"));
            }
            pairs.push((est.get(x, y), g));
        }
    }
    let (num, den) = pairs.iter().fold((0.0, 0.0), |(n, d), (e, g)| (n + e * g, d + e * e));
    let scale = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
    let n = pairs.len() as f64;
    let mut sse = 0.0;
    let mut rel = 0.0;
    let mut peak: f64 = 0.0;
    for (e, g) in &pairs {
        let diff = e * scale - g;
        sse += diff * diff;
        rel += diff.abs() / g;
        peak = peak.max(*g);
    }
    let mse = sse / n;
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    };
    Ok(DepthError {
        psnr,
        rel: rel / n,
        scale,
    })
}

/// Similarity transform `y = s R x + t` between point sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Similarity {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Least-squares similarity mapping `src` onto `dst` (closed form via SVD).
pub fn align_similarity(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Similarity {
    let n = src.len() as f64;
    let mu_x = src.iter().sum::<Vector3<f64>>() / n;
    let mu_y = dst.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    for (x, y) in src.iter().zip(dst) {
        let (dx, dy) = (x - mu_x, y - mu_y);
        cov += dy * dx.transpose();
        var_x += dx.norm_squared();
    }
    cov /= n;
    var_x /= n;
    if var_x == 0.0 {
        return Similarity {
            scale: 0.0,
            rotation: Matrix3::identity(),
            translation: mu_y,
        };
    }
    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_x;
    Similarity {
        scale,
        rotation,
        translation: mu_y - scale * rotation * mu_x,
    }
}

/// RMSE of camera centers after the best similarity alignment of `est` onto `gt`.
pub fn trajectory_error(est: &[Pose], gt: &[Pose]) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimated poses vs {} ground-truth poses",
            est.len(),
            gt.len()
        )));
    }
    if est.len() < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: est.len() });
    }
    let x: Vec<Vector3<f64>> = est.iter().map(Pose::center).collect();
    let y: Vec<Vector3<f64>> = gt.iter().map(Pose::center).collect();
    let sim = align_similarity(&x, &y);
    let sse: f64 = x
        .iter()
        .zip(&y)
        .map(|(xi, yi)| (yi - (sim.scale * sim.rotation * xi + sim.translation)).norm_squared())
        .sum();
    Ok((sse / x.len() as f64).sqrt())
}

/// Per-frame PSNR of latent images against ground truth, peak 1.
pub fn latent_psnr(est: &[Image], gt: &[Image]) -> Result<Vec<f64>> {
    if est.len() != gt.len() {
        return Err(Error::DimensionMismatch(format!("{} frames vs {}", est.len(), gt.len())));
    }
    est.iter()
        .zip(gt)
        .enumerate()
        .map(|(t, (e, g))| {
            psnr(e, g, 1.0).map_err(|err| Error::DimensionMismatch(format!("frame {t}: {err}")))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMetrics {
    pub image_psnr: f64,
    pub depth_psnr: f64,
    pub depth_rel: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub label: String,
    pub frames: Vec<FrameMetrics>,
    pub ate: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl EvalReport {
    pub fn mean_image_psnr(&self) -> f64 {
        mean(self.frames.iter().map(|f| f.image_psnr))
    }

    pub fn mean_depth_psnr(&self) -> f64 {
        mean(self.frames.iter().map(|f| f.depth_psnr))
    }

    pub fn mean_depth_rel(&self) -> f64 {
        mean(self.frames.iter().map(|f| f.depth_rel))
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "# label={}", self.label).unwrap();
        writeln!(s, "# ate_alignment=sim3").unwrap();
        writeln!(s, "# depth_psnr_on=inverse_depth peak=max_ground_truth crop=0.7").unwrap();
        for (t, f) in self.frames.iter().enumerate() {
            writeln!(
                s,
                "frame {t} image_psnr {:.6} depth_psnr {:.6} depth_rel {:.6}",
                f.image_psnr, f.depth_psnr, f.depth_rel
            )
            .unwrap();
        }
        writeln!(s, "mean image_psnr {:.6}", self.mean_image_psnr()).unwrap();
        writeln!(s, "mean depth_psnr {:.6}", self.mean_depth_psnr()).unwrap();
        writeln!(s, "mean depth_rel {:.6}", self.mean_depth_rel()).unwrap();
        writeln!(s, "ate {:.9}", self.ate).unwrap();
        s
    }

    pub fn csv_header() -> &'static str {
        "method,PSNR,depth_PSNR,rel,e_ate"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.9}",
            self.label,
            self.mean_image_psnr(),
            self.mean_depth_psnr(),
            self.mean_depth_rel(),
            self.ate
        )
    }
}

/// Full comparison of an estimate against ground truth.
pub fn evaluate(
    label: &str,
    latent: &[Image],
    depth: &[InverseDepthMap],
    poses: &[Pose],
    gt_latent: &[Image],
    gt_depth: &[InverseDepthMap],
    gt_poses: &[Pose],
    crop_fraction: f64,
) -> Result<EvalReport> {
    let psnrs = latent_psnr(latent, gt_latent)?;
    if depth.len() != gt_depth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} depth maps vs {}",
            depth.len(),
            gt_depth.len()
        )));
    }
    let mut frames = Vec::with_capacity(psnrs.len());
    for (t, p) in psnrs.into_iter().enumerate() {
        let d = depth_error(&depth[t], &gt_depth[t], crop_fraction)
            .map_err(|e| Error::DimensionMismatch(format!("frame {t}: {e}")))?;
        frames.push(FrameMetrics {
            image_psnr: p,
            depth_psnr: d.psnr,
            depth_rel: d.rel,
        });
    }
    Ok(EvalReport {
        label: label.to_string(),
        frames,
        ate: trajectory_error(poses, gt_poses)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::geometry::{se3_exp, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_depth(seed: u64) -> InverseDepthMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        InverseDepthMap::new(20, 10, (0..200).map(|_| rng.random_range(0.2..1.0)).collect()).unwrap()
    }

    #[test]
    fn depth_error_identities() {
        let g = random_depth(1);
        let e = depth_error(&g, &g, 0.7).unwrap();
        assert_eq!(e.rel, 0.0);
        assert!(e.psnr.is_infinite());
        let e = depth_error(&g.scaled(2.0), &g, 0.7).unwrap();
        assert!((e.scale - 0.5).abs() < 1e-12);
        assert!(e.rel < 1e-12);
    }

    #[test]
    fn depth_rel_matches_loop() {
        let g = random_depth(2);
        let est = random_depth(3);
        let e = depth_error(&est, &g, 0.7).unwrap();
        // 20 x 10 cropped to 14 x 7 starting at (3, 1).
        let (mut num, mut den) = (0.0, 0.0);
        for y in 1..8 {
            for x in 3..17 {
                num += est.get(x, y) * g.get(x, y);
                den += est.get(x, y) * est.get(x, y);
            }
        }
        let s = num / den;
        let mut rel = 0.0;
        for y in 1..8 {
            for x in 3..17 {
                rel += (est.get(x, y) * s - g.get(x, y)).abs() / g.get(x, y);
            }
        }
        assert!((e.rel - rel / 98.0).abs() < 1e-12);
    }

    #[test]
    fn depth_error_rejects_bad_input() {
        let g = random_depth(1);
        let small = InverseDepthMap::constant(4, 4, 1.0).unwrap();
        assert!(depth_error(&small, &g, 0.7).is_err());
    }

    fn trajectory(seed: u64, n: usize) -> Vec<Pose> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| se3_exp(&Twist::from_slice(&(0..6).map(|_| rng.random_range(-0.5..0.5)).collect::<Vec<_>>())))
            .collect()
    }

    #[test]
    fn ate_absorbs_similarity() {
        let gt = trajectory(4, 6);
        assert!(trajectory_error(&gt, &gt).unwrap() < 1e-12);
        let g = se3_exp(&Twist::from_slice(&[0.3, -1.0, 0.2, 0.4, 0.1, -0.7]));
        let s = 2.5;
        // Scale the world, then move it rigidly: centers map to s R c + t.
        let moved: Vec<Pose> = gt
            .iter()
            .map(|p| {
                let scaled = Pose::new(p.rotation, p.translation * s).unwrap();
                scaled.compose(&g.inverse())
            })
            .collect();
        assert!(trajectory_error(&moved, &gt).unwrap() < 1e-10);
    }

    // Oracle: for a fixed scale the best rotation and translation follow
    // from an orthogonal Procrustes fit; scan the scale on a fine grid.
    fn brute_force_ate(x: &[Vector3<f64>], y: &[Vector3<f64>]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<Vector3<f64>>() / n;
        let my = y.iter().sum::<Vector3<f64>>() / n;
        let mut cov = Matrix3::zeros();
        for (a, b) in x.iter().zip(y) {
            cov += (b - my) * (a - mx).transpose();
        }
        let svd = cov.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if u.determinant() * vt.determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        let r = u * d * vt;
        let cost = |s: f64| -> f64 {
            x.iter()
                .zip(y)
                .map(|(a, b)| ((b - my) - s * r * (a - mx)).norm_squared())
                .sum::<f64>()
                / n
        };
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..6 {
            let step = (hi - lo) / 1000.0;
            let best = (0..=1000)
                .map(|i| lo + i as f64 * step)
                .min_by(|a, b| cost(*a).partial_cmp(&cost(*b)).unwrap())
                .unwrap();
            lo = (best - step).max(0.0);
            hi = best + step;
        }
        cost(0.5 * (lo + hi)).sqrt()
    }

    #[test]
    fn ate_matches_brute_force_alignment() {
        let gt = trajectory(5, 7);
        let mut est = gt.clone();
        est[3] = Pose::new(est[3].rotation, est[3].translation + Vector3::new(0.2, -0.1, 0.05)).unwrap();
        let ate = trajectory_error(&est, &gt).unwrap();
        assert!(ate > 0.0);
        let x: Vec<_> = est.iter().map(Pose::center).collect();
        let y: Vec<_> = gt.iter().map(Pose::center).collect();
        assert!((ate - brute_force_ate(&x, &y)).abs() < 1e-6);
    }

    #[test]
    fn report_means_and_lengths() {
        let gt = trajectory(6, 3);
        assert!(trajectory_error(&gt[..2], &gt).is_err());
        let r = EvalReport {
            label: "x".into(),
            frames: vec![
                FrameMetrics { image_psnr: 30.0, depth_psnr: 20.0, depth_rel: 0.1 },
                FrameMetrics { image_psnr: 32.0, depth_psnr: 22.0, depth_rel: 0.3 },
            ],
            ate: 0.01,
        };
        assert!((r.mean_image_psnr() - 31.0).abs() < 1e-12);
        assert!((r.mean_depth_rel() - 0.2).abs() < 1e-12);
        assert!(r.to_text().contains("ate_alignment=sim3"));
        assert_eq!(r.csv_row().split(',').count(), 5);
    }

    proptest! {
        #[test]
        fn depth_error_ignores_positive_scale(seed in 0u64..1000, s in 0.05f64..20.0) {
            let gt = random_depth(seed);
            let est = random_depth(seed + 1);
            let a = depth_error(&est, &gt, 0.7).unwrap();
            let b = depth_error(&est.scaled(s), &gt, 0.7).unwrap();
            prop_assert!((a.rel - b.rel).abs() < 1e-9);
            prop_assert!((a.psnr - b.psnr).abs() < 1e-7);
        }

        #[test]
        fn ate_ignores_similarities(
            seed in 0u64..1000,
            v in proptest::array::uniform6(-0.5f64..0.5),
            s in 0.2f64..5.0,
        ) {
            let gt = trajectory(seed, 5);
            let est = trajectory(seed + 7, 5);
            let g = se3_exp(&Twist::from_slice(&v));
            let moved: Vec<Pose> = est
                .iter()
                .map(|p| Pose::new(p.rotation, p.translation * s).unwrap().compose(&g.inverse()))
                .collect();
            let (a, b) = (trajectory_error(&est, &gt).unwrap(), trajectory_error(&moved, &gt).unwrap());
            prop_assert!((a - b).abs() < 1e-9 * a.max(1.0), "{} vs {}", a, b);
        }
    }
}
