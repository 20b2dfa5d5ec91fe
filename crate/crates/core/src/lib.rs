//! Spatial-temporal correspondence guidance for zero-shot diffusion video
//! translation and editing.
//!
//! The crate bundles every stage of the method at desk scale:
//!
//! - [`media`]: frame I/O, procedural scenes with analytic flows, edge maps
//! - [`correspondence`]: block-matching flow, occlusion, warping, token indices
//! - [`optim`]: temporal/spatial consistency losses, gradients, Adam loop
//! - [`attention`]: spatial-guided, efficient cross-frame and temporal-guided attention
//! - [`diffusion`]: schedules, DDPM/DDIM, inversion, synthetic denoiser, toy codec
//! - [`scheduler`]: keyframe selection, batching, cyclic sampling, propagation
//! - [`pipeline`]: translation, editing and long-video runs
//! - [`metrics`]: Pixel-MSE, Spat-Con and a feature-cosine Tem-Con
//!
//! All numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common cases.

pub mod attention;
pub mod correspondence;
pub mod diffusion;
pub mod error;
pub mod ftns;
pub mod media;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod seeding;
pub mod scheduler;
pub mod tensor;

pub use error::{FrescoError, Result};
pub use scalar::Real;
pub use tensor::{Grid, Matrix};

pub type Grid64 = Grid<f64>;
pub type Grid32 = Grid<f32>;
pub type Matrix64 = Matrix<f64>;
pub type FrameSequence64 = media::FrameSequence<f64>;
pub type FrameSequence32 = media::FrameSequence<f32>;
pub type FlowField64 = correspondence::FlowField<f64>;
pub type FlowField32 = correspondence::FlowField<f32>;
pub type FeatureStack64 = optim::FeatureStack<f64>;
pub type FeatureStack32 = optim::FeatureStack<f32>;
pub type Engine64 = pipeline::Engine<f64>;
pub type Engine32 = pipeline::Engine<f32>;
