//! Alternating minimization of the joint energy: sequential initialization,
//! then rounds of latent-image, structure and visibility updates.

mod config;
mod image;
mod init;
mod normal;
mod pipeline;
mod state;
mod structure;
mod visibility;

pub use config::SolverConfig;
pub use image::{update_image, ImageUpdate};
pub use init::initialize;
pub use pipeline::{run_pipeline, Diagnostics, Initialization, Mode, Observer, Phase, PhaseRecord, PipelineResult};
pub use state::{neighbors, previous_pose, SequenceState};
pub use structure::{update_structure, StructureDelta, StructureUpdate};
pub use visibility::{update_visibility, visibility_mask};
