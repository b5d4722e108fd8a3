use std::fmt;

use crate::capture::CaptureModel;
use crate::energy::{edge_weights, EnergyBreakdown, EnergyEvaluator, EnergyParams};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::imaging::Image;
use crate::solver::image::update_image;
use crate::solver::init::initialize;
use crate::solver::structure::update_structure;
use crate::solver::visibility::update_visibility;
use crate::solver::{SequenceState, SolverConfig};

/// Which reconstruction to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Blur-aware joint estimation.
    Proposed,
    /// Initialization only; latent images stay bicubic upsamplings.
    Bicubic,
    /// Structure estimation with a blur-free capture model and latent images
    /// fixed to bicubic upsamplings.
    BlurUnaware,
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Proposed => "proposed",
            Mode::Bicubic => "bicubic",
            Mode::BlurUnaware => "blur_unaware",
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "proposed" => Ok(Mode::Proposed),
            "bicubic" => Ok(Mode::Bicubic),
            "blur_unaware" => Ok(Mode::BlurUnaware),
            _ => Err(Error::invalid(format!("unknown mode `{s}`"))),
        }
    }
}

pub enum Initialization {
    /// Estimate depths and poses from the observations, starting at `seeds`.
    Estimate { seeds: Vec<Pose> },
    /// Start from a complete state.
    Given(SequenceState),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Initialization,
    Image,
    Structure,
    Visibility,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Initialization => "init",
            Phase::Image => "image",
            Phase::Structure => "structure",
            Phase::Visibility => "visibility",
        })
    }
}

#[derive(Clone, Debug)]
pub struct PhaseRecord {
    pub iteration: usize,
    pub phase: Phase,
    pub before: EnergyBreakdown,
    pub after: EnergyBreakdown,
    /// For the structure phase: whether any step was accepted.
    pub accepted: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Diagnostics {
    /// Human-readable notes about frames that needed a fallback.
    pub notes: Vec<String>,
    /// A non-finite value or linear-solver breakdown occurred somewhere.
    pub numerical_failure: bool,
}

pub struct PipelineResult {
    pub state: SequenceState,
    pub history: Vec<PhaseRecord>,
    pub diagnostics: Diagnostics,
}

/// Called after initialization (iteration 0) and after every outer iteration.
pub type Observer<'a> = dyn FnMut(usize, &SequenceState, &[PhaseRecord]) -> Result<()> + 'a;

/// Initialization followed by `max_iter` rounds of image, structure and
/// visibility updates. The energy of every phase is recorded.
pub fn run_pipeline(
    observed: &[Image],
    init: Initialization,
    model: &CaptureModel,
    params: &EnergyParams,
    config: &SolverConfig,
    mode: Mode,
    observer: &mut Observer,
) -> Result<PipelineResult> {
    params.validate()?;
    config.validate()?;
    let model = match mode {
        Mode::BlurUnaware => model.with_samples(1),
        _ => *model,
    };
    let mut state = match init {
        Initialization::Estimate { seeds } => initialize(observed, &seeds, &model, params, config)?,
        Initialization::Given(mut s) => {
            s.model = model;
            s.validate()?;
            s
        }
    };
    let weights = edge_weights(&state, params);
    let energy = |s: &SequenceState| -> Result<EnergyBreakdown> {
        EnergyEvaluator::with_weights(s, params, weights.clone())?.total()
    };
    let mut history = Vec::new();
    let mut diagnostics = Diagnostics::default();
    let e0 = energy(&state)?;
    history.push(PhaseRecord {
        iteration: 0,
        phase: Phase::Initialization,
        before: e0.clone(),
        after: e0,
        accepted: true,
    });
    observer(0, &state, &history)?;
    if mode == Mode::Bicubic {
        return Ok(PipelineResult {
            state,
            history,
            diagnostics,
        });
    }

    for iteration in 1..=config.max_iter {
        if mode == Mode::Proposed {
            let before = energy(&state)?;
            let geometries = state.capture_geometries()?;
            let mut latent = Vec::with_capacity(state.frames());
            for t in 0..state.frames() {
                let u = update_image(t, &state, &geometries, params, config)?;
                if u.breakdown {
                    diagnostics.numerical_failure = true;
                    diagnostics.notes.push(format!("iteration {iteration}: image solve of frame {t} broke down"));
                }
                if u.kept_previous {
                    diagnostics.notes.push(format!("iteration {iteration}: frame {t} kept its previous image"));
                }
                latent.push(u.image);
            }
            state.latent = latent;
            let after = energy(&state)?;
            log::info!("iteration {iteration} image phase: {:.6e} -> {:.6e}", before.total, after.total);
            history.push(PhaseRecord {
                iteration,
                phase: Phase::Image,
                before,
                after,
                accepted: true,
            });
        }

        let before = energy(&state)?;
        let steps = update_structure(&mut state, params, config, &weights)?;
        let accepted = steps.iter().any(|s| s.accepted);
        for s in &steps {
            if s.poses_frozen {
                diagnostics.notes.push(format!("iteration {iteration}: poses frozen by a singular system"));
            }
            if s.breakdown {
                diagnostics.numerical_failure = true;
            }
        }
        if !accepted {
            diagnostics.notes.push(format!("iteration {iteration}: structure step rejected"));
        }
        let after = energy(&state)?;
        log::info!("iteration {iteration} structure phase: {:.6e} -> {:.6e}", before.total, after.total);
        history.push(PhaseRecord {
            iteration,
            phase: Phase::Structure,
            before,
            after: after.clone(),
            accepted,
        });

        state.visibility = update_visibility(&state, params.neighbor_radius);
        let vis = energy(&state)?;
        history.push(PhaseRecord {
            iteration,
            phase: Phase::Visibility,
            before: after,
            after: vis,
            accepted: true,
        });
        observer(iteration, &state, &history)?;
    }
    Ok(PipelineResult {
        state,
        history,
        diagnostics,
    })
}
