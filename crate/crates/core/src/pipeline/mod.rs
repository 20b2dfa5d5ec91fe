//! Translation, editing and long-video runs.

mod config;
mod params;
mod run;

pub use config::{Mode, Propagation, RunConfig};
pub use params::{build_fresco_params, estimate_correspondence, FrescoFlags, FrescoParams, FrescoSettings};
pub use run::{
    edit_video, run_long_video, translate_video, Anchors, BatchInput, BatchOutput, Engine, RunOutput, Trajectory,
};
