//! Long-video planning: motion-adaptive keyframes, anchored batches, cyclic
//! keyframe sets, token propagation and flow-based frame interpolation.

mod batches;
mod cyclic;
mod interpolate;
mod keyframes;
mod propagate;

pub use batches::{batch_plan, AnchorSource, BatchPlan};
pub use cyclic::{cyclic_schedule, CyclicSchedule};
pub use interpolate::{interpolate_nonkeyframes, match_color};
pub use keyframes::{frame_distances, select_keyframes, select_keyframes_from_distances, KeyframePlan};
pub use propagate::{nearest_tokens, neighbouring_keyframes, propagate_tokens};
