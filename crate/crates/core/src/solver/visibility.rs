//! Occlusion masks between neighboring frames.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::capture::CaptureModel;
use crate::geometry::{InverseDepthMap, Pose, RelativeWarp};
use crate::imaging::{bilinear_taps, Mask};
use crate::solver::{neighbors, SequenceState};

/// Pixels of the observed grid of frame `t` that stay visible in frame `s`.
///
/// Observed pixel centers are warped into `s` and grouped by the observed
/// pixel they land in. Within a group only the strictly nearest pixel
/// (greatest inverse depth) is visible; warps leaving the image are not.
pub fn visibility_mask(depth_t: &InverseDepthMap, pose_t: &Pose, pose_s: &Pose, model: &CaptureModel) -> Mask {
    let f = model.factor;
    let (w, h) = (depth_t.width(), depth_t.height());
    let (lw, lh) = (w / f, h / f);
    let off = (f as f64 - 1.0) / 2.0;
    let warp = RelativeWarp::new(pose_t, pose_s, &model.intrinsics);
    let mut mask = Mask::filled(lw, lh, false);
    let mut cells: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
    for p in 0..lw * lh {
        let (x, y) = ((p % lw) as f64 * f as f64 + off, (p / lw) as f64 * f as f64 + off);
        let taps = bilinear_taps(w, h, x, y);
        let d: f64 = (0..4).map(|k| taps.weights[k] * depth_t.data()[taps.indices[k]]).sum();
        let Some((u, v, _)) = warp.warp(x, y, d) else { continue };
        let (cu, cv) = (((u - off) / f as f64).round(), ((v - off) / f as f64).round());
        if !(cu >= 0.0 && cv >= 0.0 && cu < lw as f64 && cv < lh as f64) {
            continue;
        }
        cells.entry(cv as usize * lw + cu as usize).or_default().push((p, d));
    }
    for members in cells.values() {
        let best = members.iter().map(|m| m.1).fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<usize> = members.iter().filter(|m| m.1 == best).map(|m| m.0).collect();
        if winners.len() == 1 {
            mask.data[winners[0]] = true;
        }
    }
    mask
}

/// Masks `(s, mask)` for every frame and each of its neighbors.
pub fn update_visibility(state: &SequenceState, neighbor_radius: usize) -> Vec<Vec<(usize, Mask)>> {
    (0..state.frames())
        .into_par_iter()
        .map(|t| {
            neighbors(t, state.frames(), neighbor_radius)
                .into_iter()
                .map(|s| (s, visibility_mask(&state.depth[t], &state.poses[t], &state.poses[s], &state.model)))
                .collect()
        })
        .collect()
}
