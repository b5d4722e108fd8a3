//! Command-line front end: scene synthesis, reconstruction runs and evaluation.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use log::info;

pub use config::RunConfig;

use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::geometry::posefile::{read_poses, write_poses};
use crate::geometry::InverseDepthMap;
use crate::imaging::io::{read_pfm, write_mask_png, write_pfm};
use crate::imaging::Image;
use crate::solver::{run_pipeline, Initialization, PhaseRecord, SequenceState};
use crate::synth::{generate, perturb_poses};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "blurstereo", version, about = "Depth, pose and sharp image recovery from blurred sequences")]
pub struct Cli {
    /// Config file applied on top of the defaults (and of the input bundle's config for `run`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Input directory: a synthesized bundle for `run`, estimates for `eval`.
    #[arg(long = "in", global = true)]
    pub input: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; defaults to the hardware count.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// RNG seed overriding the config's scene seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene with ground truth.
    Synth,
    /// Reconstruct a bundle, writing a checkpoint per iteration.
    Run,
    /// Compare one or more reconstructions against ground truth.
    Eval {
        /// Directory holding the `gt_` files of a synthesized bundle.
        #[arg(long)]
        gt: PathBuf,
    },
}

/// Exit status for an error: numerical trouble is 3, anything else a validation error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

/// Runs a parsed command line and returns its exit status.
pub fn execute(cli: &Cli) -> i32 {
    let result = (|| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads.unwrap_or(0))
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| dispatch(cli))
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Error::invalid("--out is required"))?;
    match &cli.command {
        Command::Synth => {
            let config = resolve(cli, None)?;
            cmd_synth(&config, &out)?;
            Ok(EXIT_OK)
        }
        Command::Run => {
            let input = single_input(cli)?;
            let config = resolve(cli, Some(&input))?;
            cmd_run(&config, &input, &out)
        }
        Command::Eval { gt } => {
            if cli.input.is_empty() {
                return Err(Error::invalid("eval needs at least one --in directory"));
            }
            let config = resolve(cli, None)?;
            cmd_eval(&cli.input, gt, &out, config.crop)?;
            Ok(EXIT_OK)
        }
    }
}

fn single_input(cli: &Cli) -> Result<PathBuf> {
    match cli.input.as_slice() {
        [one] => Ok(one.clone()),
        _ => Err(Error::invalid("run takes exactly one --in directory")),
    }
}

/// Defaults, then the bundle's config, then `--config`, then flags.
fn resolve(cli: &Cli, bundle: Option<&Path>) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(dir) = bundle {
        let path = dir.join("config.txt");
        if path.exists() {
            config.apply_file(&path)?;
        }
    }
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        config.scene.seed = seed;
    }
    if let Some(dir) = bundle {
        config.input = Some(dir.to_path_buf());
    }
    config.output = cli.out.clone();
    config.validate()?;
    Ok(config)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Renders the scene and writes observations, ground truth and seed poses.
pub fn cmd_synth(config: &RunConfig, out: &Path) -> Result<()> {
    config.validate()?;
    create_dir(out)?;
    let bundle = generate(&config.scene)?;
    for t in 0..bundle.poses.len() {
        write_pfm(&out.join(format!("B_{t}.pfm")), &bundle.observed[t])?;
        write_pfm(&out.join(format!("gt_I_{t}.pfm")), &bundle.latent[t])?;
        write_pfm(&out.join(format!("gt_D_{t}.pfm")), &bundle.depth[t].to_image())?;
    }
    write_poses(&out.join("gt_poses.txt"), &bundle.poses)?;
    let seeds = perturb_poses(&bundle.poses, config.perturbation, config.perturbation_seed);
    write_poses(&out.join("poses.txt"), &seeds)?;
    config.write(&out.join("config.txt"))?;
    info!("wrote {} frames to {}", bundle.poses.len(), out.display());
    Ok(())
}

/// Reads `{prefix}_{t}.pfm` for `t = 0, 1, ...` until the first missing index.
fn read_sequence(dir: &Path, prefix: &str) -> Result<Vec<Image>> {
    let mut out = Vec::new();
    loop {
        let path = dir.join(format!("{prefix}_{}.pfm", out.len()));
        if !path.exists() {
            return Ok(out);
        }
        out.push(read_pfm(&path)?);
    }
}

/// Reads exactly `frames` files `{prefix}_{t}.pfm`, naming the first missing one.
fn read_frames(dir: &Path, prefix: &str, frames: usize) -> Result<Vec<Image>> {
    (0..frames)
        .map(|t| {
            let path = dir.join(format!("{prefix}_{t}.pfm"));
            if !path.exists() {
                return Err(Error::format(&path, "missing frame"));
            }
            read_pfm(&path)
        })
        .collect()
}

fn depth_maps(images: Vec<Image>) -> Result<Vec<InverseDepthMap>> {
    images.iter().map(InverseDepthMap::from_image).collect()
}

fn energy_text(records: &[PhaseRecord]) -> String {
    let mut s = String::from("# iteration phase energy_before energy_after accepted\n");
    for r in records {
        s.push_str(&format!(
            "{} {} {:.12e} {:.12e} {}\n",
            r.iteration, r.phase, r.before.total, r.after.total, r.accepted
        ));
    }
    if let Some(last) = records.last() {
        s.push_str(&last.after.report());
    }
    s
}

/// Latent images, depths, poses, energies and visibility masks of a state.
pub fn write_state(dir: &Path, state: &SequenceState, records: &[PhaseRecord]) -> Result<()> {
    create_dir(dir)?;
    for t in 0..state.frames() {
        write_pfm(&dir.join(format!("I_{t}.pfm")), &state.latent[t])?;
        write_pfm(&dir.join(format!("D_{t}.pfm")), &state.depth[t].to_image())?;
        for (s, mask) in &state.visibility[t] {
            write_mask_png(&dir.join(format!("masks_{t}_{s}.png")), mask)?;
        }
    }
    write_poses(&dir.join("poses.txt"), &state.poses)?;
    write_text(&dir.join("energy.txt"), &energy_text(records))
}

/// Runs the reconstruction on a bundle. Returns the exit status: a flagged
/// numerical failure still writes every output but exits with 3.
pub fn cmd_run(config: &RunConfig, input: &Path, out: &Path) -> Result<i32> {
    config.validate()?;
    let observed = read_sequence(input, "B")?;
    if observed.len() < 2 {
        return Err(Error::InsufficientFrames {
            needed: 2,
            got: observed.len(),
        });
    }
    let seeds = read_poses(&input.join("poses.txt"))?;
    create_dir(out)?;
    config.write(&out.join("config.txt"))?;
    let model = config.capture_model();
    let result = run_pipeline(
        &observed,
        Initialization::Estimate { seeds },
        &model,
        &config.energy,
        &config.solver,
        config.mode,
        &mut |k, state, records| {
            let current: Vec<PhaseRecord> = records.iter().filter(|r| r.iteration == k).cloned().collect();
            write_state(&out.join(format!("iter_{k}")), state, &current)
        },
    )?;
    write_state(out, &result.state, &result.history)?;
    let mut notes = result.diagnostics.notes.join("\n");
    notes.push('\n');
    write_text(&out.join("diagnostics.txt"), &notes)?;
    info!("run finished with {} notes", result.diagnostics.notes.len());
    if result.diagnostics.numerical_failure {
        eprintln!("numerical failure flagged; see {}", out.join("diagnostics.txt").display());
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

/// Evaluates each estimate directory against the bundle's ground truth and
/// writes `report.txt` and `report.csv`.
pub fn cmd_eval(estimates: &[PathBuf], gt_dir: &Path, out: &Path, crop: f64) -> Result<Vec<EvalReport>> {
    let gt_latent = read_sequence(gt_dir, "gt_I")?;
    let frames = gt_latent.len();
    if frames < 2 {
        return Err(Error::InsufficientFrames { needed: 2, got: frames });
    }
    let gt_depth = depth_maps(read_frames(gt_dir, "gt_D", frames)?)?;
    let gt_poses = read_poses(&gt_dir.join("gt_poses.txt"))?;
    let mut reports = Vec::new();
    for dir in estimates {
        let latent = read_frames(dir, "I", frames)?;
        let depth = depth_maps(read_frames(dir, "D", frames)?)?;
        let poses = read_poses(&dir.join("poses.txt"))?;
        let label = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        reports.push(evaluate(&label, &latent, &depth, &poses, &gt_latent, &gt_depth, &gt_poses, crop)?);
    }
    create_dir(out)?;
    let text: String = reports.iter().map(|r| r.to_text() + "\n").collect();
    write_text(&out.join("report.txt"), &text)?;
    let mut csv = format!("{}\n", EvalReport::csv_header());
    for r in &reports {
        csv.push_str(&r.csv_row());
        csv.push('\n');
    }
    write_text(&out.join("report.csv"), &csv)?;
    Ok(reports)
}
