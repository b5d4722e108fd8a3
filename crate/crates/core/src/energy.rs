//! The unified energy: per-frame matching, self-consistency and
//! regularization terms, summed over the sequence.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::capture::CaptureGeometry;
use crate::error::{Error, Result};
use crate::geometry::InverseDepthMap;
use crate::imaging::{gradient, upsample_bicubic, Image, Mask};
use crate::solver::{neighbors, SequenceState};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnergyParams {
    pub lambda_s: f64,
    pub lambda_d: f64,
    pub lambda_i: f64,
    pub sigma_g: f64,
    pub neighbor_radius: usize,
}

impl Default for EnergyParams {
    fn default() -> Self {
        EnergyParams {
            lambda_s: 30.0,
            lambda_d: 9.0,
            lambda_i: 0.45,
            sigma_g: 0.1,
            neighbor_radius: 1,
        }
    }
}

impl EnergyParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.lambda_s, self.lambda_d, self.lambda_i];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("energy weights must be finite and non-negative"));
        }
        if !(self.sigma_g > 0.0) {
            return Err(Error::invalid("sigma_g must be positive"));
        }
        if self.neighbor_radius == 0 {
            return Err(Error::invalid("neighbor_radius must be at least 1"));
        }
        Ok(())
    }
}

/// Edge-aware smoothness weights in `(0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeWeightMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

/// `exp(-|grad B|^2 / sigma^2)` with the gradient averaged over channels.
pub fn edge_weight(b_up: &Image, sigma_g: f64) -> EdgeWeightMap {
    let g = gradient(b_up);
    let ch = b_up.channels();
    let inv = 1.0 / ch as f64;
    let data = (0..b_up.pixel_count())
        .map(|i| {
            let (mut gx, mut gy) = (0.0, 0.0);
            for c in 0..ch {
                gx += g.dx[i * ch + c];
                gy += g.dy[i * ch + c];
            }
            let (gx, gy) = (gx * inv, gy * inv);
            // Underflow would leave the (0, 1] range.
            (-(gx * gx + gy * gy) / (sigma_g * sigma_g)).exp().max(f64::MIN_POSITIVE)
        })
        .collect();
    EdgeWeightMap {
        width: b_up.width(),
        height: b_up.height(),
        data,
    }
}

pub fn edge_weights(state: &SequenceState, params: &EnergyParams) -> Vec<EdgeWeightMap> {
    state
        .observed
        .par_iter()
        .map(|b| edge_weight(&upsample_bicubic(b, state.model.factor), params.sigma_g))
        .collect()
}

/// Sum of absolute channel residuals over pixels where `valid` (and `visible`, if given) hold.
pub fn masked_l1(observed: &Image, predicted: &Image, valid: &Mask, visible: Option<&Mask>) -> f64 {
    let ch = observed.channels();
    let mut acc = 0.0;
    for i in 0..observed.pixel_count() {
        if !valid.data[i] || visible.is_some_and(|m| !m.data[i]) {
            continue;
        }
        for c in 0..ch {
            acc += (observed.data()[i * ch + c] - predicted.data()[i * ch + c]).abs();
        }
    }
    acc
}

/// `sum_x g(x) |grad D(x)|_2`.
pub fn weighted_depth_tv(depth: &InverseDepthMap, weights: &EdgeWeightMap) -> f64 {
    let g = gradient(&depth.to_image());
    (0..depth.data().len())
        .map(|i| weights.data[i] * g.magnitude(i, 0))
        .sum()
}

/// Isotropic total variation, summed over channels.
pub fn image_tv(img: &Image) -> f64 {
    let g = gradient(img);
    let ch = img.channels();
    let mut acc = 0.0;
    for i in 0..img.pixel_count() {
        for c in 0..ch {
            acc += g.magnitude(i, c);
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameEnergy {
    pub matching: f64,
    pub self_consistency: f64,
    pub regularization: f64,
}

impl FrameEnergy {
    pub fn total(&self) -> f64 {
        self.matching + self.self_consistency + self.regularization
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EnergyBreakdown {
    pub frames: Vec<FrameEnergy>,
    pub matching: f64,
    pub self_consistency: f64,
    pub regularization: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn from_frames(frames: Vec<FrameEnergy>) -> Self {
        let mut out = EnergyBreakdown {
            frames,
            ..Default::default()
        };
        for f in &out.frames {
            out.matching += f.matching;
            out.self_consistency += f.self_consistency;
            out.regularization += f.regularization;
        }
        out.total = out.matching + out.self_consistency + out.regularization;
        out
    }

    /// One line per frame per term, then the sequence totals.
    pub fn report(&self) -> String {
        let mut s = String::from("# edge_weight=gaussian_gradient\n");
        for (t, f) in self.frames.iter().enumerate() {
            writeln!(s, "frame {t} matching {:.12e}", f.matching).unwrap();
            writeln!(s, "frame {t} self_consistency {:.12e}", f.self_consistency).unwrap();
            writeln!(s, "frame {t} regularization {:.12e}", f.regularization).unwrap();
        }
        writeln!(s, "total matching {:.12e}", self.matching).unwrap();
        writeln!(s, "total self_consistency {:.12e}", self.self_consistency).unwrap();
        writeln!(s, "total regularization {:.12e}", self.regularization).unwrap();
        writeln!(s, "total total {:.12e}", self.total).unwrap();
        s
    }
}

/// Energy evaluation with the frame capture geometries built once.
pub struct EnergyEvaluator<'a> {
    state: &'a SequenceState,
    params: EnergyParams,
    geometries: Vec<CaptureGeometry>,
    weights: Vec<EdgeWeightMap>,
}

impl<'a> EnergyEvaluator<'a> {
    pub fn new(state: &'a SequenceState, params: &EnergyParams) -> Result<Self> {
        params.validate()?;
        state.validate()?;
        Ok(EnergyEvaluator {
            state,
            params: *params,
            geometries: state.capture_geometries()?,
            weights: edge_weights(state, params),
        })
    }

    pub fn with_weights(
        state: &'a SequenceState,
        params: &EnergyParams,
        weights: Vec<EdgeWeightMap>,
    ) -> Result<Self> {
        params.validate()?;
        Ok(EnergyEvaluator {
            state,
            params: *params,
            geometries: state.capture_geometries()?,
            weights,
        })
    }

    pub fn geometry(&self, t: usize) -> &CaptureGeometry {
        &self.geometries[t]
    }

    pub fn matching(&self, t: usize) -> Result<f64> {
        let st = self.state;
        let mut acc = 0.0;
        for s in neighbors(t, st.frames(), self.params.neighbor_radius) {
            let (pred, valid) = self.geometries[t].apply(&st.latent[s], &st.poses[s])?;
            acc += masked_l1(&st.observed[t], &pred, &valid, st.mask(t, s));
        }
        Ok(acc)
    }

    pub fn self_consistency(&self, t: usize) -> Result<f64> {
        if self.params.lambda_s == 0.0 {
            return Ok(0.0);
        }
        let st = self.state;
        let (pred, valid) = self.geometries[t].apply(&st.latent[t], &st.poses[t])?;
        Ok(self.params.lambda_s * masked_l1(&st.observed[t], &pred, &valid, None))
    }

    pub fn regularization(&self, t: usize) -> f64 {
        let st = self.state;
        let mut acc = 0.0;
        if self.params.lambda_d != 0.0 {
            acc += self.params.lambda_d * weighted_depth_tv(&st.depth[t], &self.weights[t]);
        }
        if self.params.lambda_i != 0.0 {
            acc += self.params.lambda_i * image_tv(&st.latent[t]);
        }
        acc
    }

    pub fn frame(&self, t: usize) -> Result<FrameEnergy> {
        Ok(FrameEnergy {
            matching: self.matching(t)?,
            self_consistency: self.self_consistency(t)?,
            regularization: self.regularization(t),
        })
    }

    pub fn total(&self) -> Result<EnergyBreakdown> {
        let frames = (0..self.state.frames())
            .into_par_iter()
            .map(|t| self.frame(t))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnergyBreakdown::from_frames(frames))
    }
}

pub fn matching_term(t: usize, state: &SequenceState, params: &EnergyParams) -> Result<f64> {
    EnergyEvaluator::new(state, params)?.matching(t)
}

pub fn selfconsistency_term(t: usize, state: &SequenceState, params: &EnergyParams) -> Result<f64> {
    EnergyEvaluator::new(state, params)?.self_consistency(t)
}

pub fn regularization_term(t: usize, state: &SequenceState, params: &EnergyParams) -> Result<f64> {
    Ok(EnergyEvaluator::new(state, params)?.regularization(t))
}

pub fn total_energy(state: &SequenceState, params: &EnergyParams) -> Result<EnergyBreakdown> {
    EnergyEvaluator::new(state, params)?.total()
}
