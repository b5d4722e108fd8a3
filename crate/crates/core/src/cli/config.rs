//! Flat `key = value` run configuration. Every key has a default, `#` starts
//! a comment and unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::capture::CaptureModel;
use crate::energy::EnergyParams;
use crate::error::{Error, Result};
use crate::geometry::Twist;
use crate::solver::{Mode, SolverConfig};
use crate::synth::{SceneKind, SceneSpec, TextureSource};

/// Everything a synth, run or eval command needs, resolved to concrete values.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scene: SceneSpec,
    /// Exposure samples of the solver's capture model.
    pub samples: usize,
    pub energy: EnergyParams,
    pub solver: SolverConfig,
    pub mode: Mode,
    /// Norm of the random twists applied to ground truth when writing seed poses.
    pub perturbation: f64,
    pub perturbation_seed: u64,
    /// Center crop used by depth evaluation.
    pub crop: f64,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: SceneSpec::default(),
            samples: 50,
            energy: EnergyParams::default(),
            solver: SolverConfig::default(),
            mode: Mode::Proposed,
            perturbation: 0.0,
            perturbation_seed: 99,
            crop: 0.7,
            input: None,
            output: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::invalid(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn path_value(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl RunConfig {
    /// The solver's capture model: scene optics with `samples` exposure samples.
    pub fn capture_model(&self) -> CaptureModel {
        self.scene.capture_model().with_samples(self.samples)
    }

    /// Assigns one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let sc = &mut self.scene;
        let e = &mut self.energy;
        let s = &mut self.solver;
        match key {
            "scene" => sc.kind = SceneKind::parse(value)?,
            "texture" => {
                sc.texture = match (value, &sc.texture) {
                    ("procedural", TextureSource::Procedural { .. }) => return Ok(()),
                    ("procedural", _) => TextureSource::Procedural { seed: 7 },
                    (path, TextureSource::Png { scale, .. }) => TextureSource::Png {
                        path: PathBuf::from(path),
                        scale: *scale,
                    },
                    (path, _) => TextureSource::Png {
                        path: PathBuf::from(path),
                        scale: 0.01,
                    },
                }
            }
            "texture_seed" => match &mut sc.texture {
                TextureSource::Procedural { seed } => *seed = parse_num(key, value)?,
                TextureSource::Png { .. } => return Err(Error::invalid("texture_seed needs a procedural texture")),
            },
            "texture_scale" => match &mut sc.texture {
                TextureSource::Png { scale, .. } => *scale = parse_num(key, value)?,
                TextureSource::Procedural { .. } => {
                    return Err(Error::invalid("texture_scale needs an image texture"))
                }
            },
            "background_inverse_depth" => sc.background_inverse_depth = parse_num(key, value)?,
            "foreground_inverse_depth" => sc.foreground_inverse_depth = parse_num(key, value)?,
            "foreground_rect" => {
                let v = parse_list(key, value)?;
                sc.foreground_rect = v
                    .try_into()
                    .map_err(|_| Error::invalid("foreground_rect takes four values"))?;
            }
            "width" => sc.width = parse_num(key, value)?,
            "height" => sc.height = parse_num(key, value)?,
            "fx" => sc.intrinsics.fx = parse_num(key, value)?,
            "fy" => sc.intrinsics.fy = parse_num(key, value)?,
            "cx" => sc.intrinsics.cx = parse_num(key, value)?,
            "cy" => sc.intrinsics.cy = parse_num(key, value)?,
            "twists" => {
                sc.twists = value
                    .split(';')
                    .map(|t| {
                        let v = parse_list(key, t.trim())?;
                        if v.len() != 6 {
                            return Err(Error::invalid("every twist takes six values"));
                        }
                        Ok(Twist::from_slice(&v))
                    })
                    .collect::<Result<_>>()?;
            }
            "exposure_fraction" => sc.exposure_fraction = parse_num(key, value)?,
            "render_samples" => sc.render_samples = parse_num(key, value)?,
            "noise_sigma" => sc.noise_sigma = parse_num(key, value)?,
            "factor" => sc.factor = parse_num(key, value)?,
            "seed" => sc.seed = parse_num(key, value)?,
            "samples" => self.samples = parse_num(key, value)?,
            "lambda_s" => e.lambda_s = parse_num(key, value)?,
            "lambda_d" => e.lambda_d = parse_num(key, value)?,
            "lambda_i" => e.lambda_i = parse_num(key, value)?,
            "sigma_g" => e.sigma_g = parse_num(key, value)?,
            "neighbor_radius" => e.neighbor_radius = parse_num(key, value)?,
            "max_iter" => s.max_iter = parse_num(key, value)?,
            "irls_inner" => s.irls_inner = parse_num(key, value)?,
            "cg_iters" => s.cg_iters = parse_num(key, value)?,
            "cg_tol" => s.cg_tol = parse_num(key, value)?,
            "pyramid_factor" => s.pyramid_factor = parse_num(key, value)?,
            "pyramid_min_dim" => s.pyramid_min_dim = parse_num(key, value)?,
            "irls_epsilon" => s.irls_epsilon = parse_num(key, value)?,
            "tv_beta" => s.tv_beta = parse_num(key, value)?,
            "step_damping" => s.step_damping = parse_num(key, value)?,
            "max_halvings" => s.max_halvings = parse_num(key, value)?,
            "d_min" => s.d_min = parse_num(key, value)?,
            "d_max" => s.d_max = parse_num(key, value)?,
            "relinearize_inner" => s.relinearize_inner = parse_bool(key, value)?,
            "init_iters" => s.init_iters = parse_num(key, value)?,
            "init_inverse_depth" => s.init_inverse_depth = parse_num(key, value)?,
            "init_refine_poses" => s.init_refine_poses = parse_bool(key, value)?,
            "init_joint_iters" => s.init_joint_iters = parse_num(key, value)?,
            "mode" => self.mode = Mode::parse(value)?,
            "perturbation" => self.perturbation = parse_num(key, value)?,
            "perturbation_seed" => self.perturbation_seed = parse_num(key, value)?,
            "crop" => self.crop = parse_num(key, value)?,
            "input" => self.input = (!value.is_empty()).then(|| PathBuf::from(value)),
            "output" => self.output = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return Err(Error::invalid(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies the assignments of a config text on top of `self`.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::format(origin, format!("line {}: expected `key = value`", lineno + 1)));
            };
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::format(origin, format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text, path)
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut c = RunConfig::default();
        c.apply_text(text, Path::new("<config>"))?;
        Ok(c)
    }

    /// Every key with its current value, grouped as written to disk.
    pub fn entries(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        let sc = &self.scene;
        let e = &self.energy;
        let s = &self.solver;
        let mut scene = vec![("scene", sc.kind.name().to_string())];
        match &sc.texture {
            TextureSource::Procedural { seed } => {
                scene.push(("texture", "procedural".into()));
                scene.push(("texture_seed", seed.to_string()));
            }
            TextureSource::Png { path, scale } => {
                scene.push(("texture", path.display().to_string()));
                scene.push(("texture_scale", scale.to_string()));
            }
        }
        let twists: Vec<String> = sc
            .twists
            .iter()
            .map(|t| join(&[t.translation_part().as_slice(), t.rotation_part().as_slice()].concat()))
            .collect();
        scene.extend([
            ("background_inverse_depth", sc.background_inverse_depth.to_string()),
            ("foreground_inverse_depth", sc.foreground_inverse_depth.to_string()),
            ("foreground_rect", join(&sc.foreground_rect)),
            ("width", sc.width.to_string()),
            ("height", sc.height.to_string()),
            ("fx", sc.intrinsics.fx.to_string()),
            ("fy", sc.intrinsics.fy.to_string()),
            ("cx", sc.intrinsics.cx.to_string()),
            ("cy", sc.intrinsics.cy.to_string()),
            ("twists", twists.join("; ")),
            ("exposure_fraction", sc.exposure_fraction.to_string()),
            ("render_samples", sc.render_samples.to_string()),
            ("noise_sigma", sc.noise_sigma.to_string()),
            ("factor", sc.factor.to_string()),
            ("seed", sc.seed.to_string()),
        ]);
        vec![
            ("scene and rendering", scene),
            ("solver capture model", vec![("samples", self.samples.to_string())]),
            (
                "energy",
                vec![
                    ("lambda_s", e.lambda_s.to_string()),
                    ("lambda_d", e.lambda_d.to_string()),
                    ("lambda_i", e.lambda_i.to_string()),
                    ("sigma_g", e.sigma_g.to_string()),
                    ("neighbor_radius", e.neighbor_radius.to_string()),
                ],
            ),
            (
                "optimization",
                vec![
                    ("max_iter", s.max_iter.to_string()),
                    ("irls_inner", s.irls_inner.to_string()),
                    ("cg_iters", s.cg_iters.to_string()),
                    ("cg_tol", s.cg_tol.to_string()),
                    ("pyramid_factor", s.pyramid_factor.to_string()),
                    ("pyramid_min_dim", s.pyramid_min_dim.to_string()),
                    ("irls_epsilon", s.irls_epsilon.to_string()),
                    ("tv_beta", s.tv_beta.to_string()),
                    ("step_damping", s.step_damping.to_string()),
                    ("max_halvings", s.max_halvings.to_string()),
                    ("d_min", s.d_min.to_string()),
                    ("d_max", s.d_max.to_string()),
                    ("relinearize_inner", s.relinearize_inner.to_string()),
                    ("init_iters", s.init_iters.to_string()),
                    ("init_inverse_depth", s.init_inverse_depth.to_string()),
                    ("init_refine_poses", s.init_refine_poses.to_string()),
                    ("init_joint_iters", s.init_joint_iters.to_string()),
                ],
            ),
            (
                "run",
                vec![
                    ("mode", self.mode.name().to_string()),
                    ("perturbation", self.perturbation.to_string()),
                    ("perturbation_seed", self.perturbation_seed.to_string()),
                    ("crop", self.crop.to_string()),
                    ("input", path_value(&self.input)),
                    ("output", path_value(&self.output)),
                ],
            ),
        ]
    }

    /// Text that parses back to exactly this config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, (section, keys)) in self.entries().into_iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            writeln!(out, "# {section}").unwrap();
            for (k, v) in keys {
                writeln!(out, "{k} = {v}").unwrap();
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.capture_model().validate()?;
        self.energy.validate()?;
        self.solver.validate()?;
        if !(self.perturbation >= 0.0 && self.perturbation.is_finite()) {
            return Err(Error::invalid("perturbation must be non-negative"));
        }
        if !(self.crop > 0.0 && self.crop <= 1.0) {
            return Err(Error::invalid("crop must lie in (0, 1]"));
        }
        Ok(())
    }
}
