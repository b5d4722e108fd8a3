use crate::error::{Error, Result};

/// Controls of the alternating minimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    /// Outer iterations of the image and structure phases.
    pub max_iter: usize,
    /// Reweighting steps per IRLS solve.
    pub irls_inner: usize,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub pyramid_factor: f64,
    /// Coarsest pyramid level keeps both sides at least this long.
    pub pyramid_min_dim: usize,
    /// Lower bound on residual magnitudes in IRLS weights.
    pub irls_epsilon: f64,
    /// Smoothing of the TV magnitude inside IRLS weights.
    pub tv_beta: f64,
    /// Levenberg damping added to the structure normal equations, relative to their diagonal.
    pub step_damping: f64,
    pub max_halvings: usize,
    pub d_min: f64,
    pub d_max: f64,
    /// Re-linearize the warps after every IRLS reweighting of the structure phase.
    pub relinearize_inner: bool,
    /// Gauss-Newton iterations per pyramid level during initialization.
    pub init_iters: usize,
    /// Starting inverse depth of the first initialized frame.
    pub init_inverse_depth: f64,
    /// Refine seed poses during initialization; the first frame always keeps its seed.
    pub init_refine_poses: bool,
    /// Rounds of alternating joint pose and depth refinement closing the initialization.
    pub init_joint_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iter: 3,
            irls_inner: 3,
            cg_iters: 200,
            cg_tol: 1e-8,
            pyramid_factor: 0.5,
            pyramid_min_dim: 20,
            irls_epsilon: 1e-4,
            tv_beta: 1e-4,
            step_damping: 1e-4,
            max_halvings: 5,
            d_min: 0.01,
            d_max: 10.0,
            relinearize_inner: false,
            init_iters: 10,
            init_inverse_depth: 0.5,
            init_refine_poses: true,
            init_joint_iters: 3,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("cg_tol", self.cg_tol),
            ("irls_epsilon", self.irls_epsilon),
            ("tv_beta", self.tv_beta),
            ("d_min", self.d_min),
            ("init_inverse_depth", self.init_inverse_depth),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.step_damping >= 0.0 && self.step_damping.is_finite()) {
            return Err(Error::invalid("step_damping must be non-negative"));
        }
        if !(self.pyramid_factor > 0.0 && self.pyramid_factor < 1.0) {
            return Err(Error::invalid("pyramid_factor must lie in (0, 1)"));
        }
        if !(self.d_max > self.d_min && self.d_max.is_finite()) {
            return Err(Error::invalid("d_max must exceed d_min"));
        }
        if self.irls_inner == 0 || self.cg_iters == 0 || self.pyramid_min_dim == 0 {
            return Err(Error::invalid("irls_inner, cg_iters and pyramid_min_dim must be positive"));
        }
        Ok(())
    }
}
