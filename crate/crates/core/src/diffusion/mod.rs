//! Noise schedules, DDPM/DDIM samplers, DDIM inversion, reference-feature
//! extraction, the synthetic denoiser and the toy latent codec.

mod codec;
mod denoiser;
mod schedule;

pub use codec::{upsample2, LatentCodec};
pub use denoiser::{
    Condition, DenoiserOutput, DenoiserSpec, LayerCapture, PromptEmbedding, SyntheticDenoiser,
};
pub use schedule::{
    ddim_inversion_step, ddim_step, ddpm_forward_sample, ddpm_step, lincomb, make_schedule, predict_x0,
    DiffusionSchedule,
};

use crate::error::{ensure, Result};
use crate::pipeline::FrescoParams;
use crate::scalar::Real;
use crate::seeding::normal_grid;
use crate::tensor::Grid;

/// Purposes of seeded noise draws; each gets an independent stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoisePurpose {
    /// Noise added when starting from an intermediate step.
    Start = 1,
    /// Fresh noise of each ancestral step.
    Step = 2,
    /// Noise of the single-step reference pass.
    Reference = 3,
}

/// Standard-normal latent noise for one frame, keyed by its global index so
/// that batching does not change the draw.
pub fn frame_noise<T: Real>(
    seed: u64,
    purpose: NoisePurpose,
    frame: usize,
    t: usize,
    dims: (usize, usize, usize),
) -> Grid<T> {
    normal_grid(seed, &[purpose as u64, frame as u64, t as u64], dims.0, dims.1, dims.2)
}

/// Features recorded at every step of a DDIM inversion; `steps[t−1]` belongs
/// to timestep `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct InversionRecord<T> {
    pub steps: Vec<LayerCapture<T>>,
}

impl<T: Real> InversionRecord<T> {
    pub fn at(&self, t: usize) -> &LayerCapture<T> {
        &self.steps[t - 1]
    }

    pub fn select(&self, frames: &[usize]) -> Result<Self> {
        Ok(Self {
            steps: self.steps.iter().map(|s| s.select(frames)).collect::<Result<_>>()?,
        })
    }
}

/// Run the DDIM recursion forwards from `x0` to `x_T`, evaluating the
/// denoiser at the current latent and recording each pass.
pub fn ddim_invert<T: Real>(
    x0: &[Grid<T>],
    denoiser: &SyntheticDenoiser<T>,
    cond: &Condition<T>,
    sched: &DiffusionSchedule<T>,
) -> Result<(Vec<Grid<T>>, InversionRecord<T>)> {
    let mut x = x0.to_vec();
    let mut steps = Vec::with_capacity(sched.steps());
    for t in 1..=sched.steps() {
        let out = denoiser.apply(&x, t, sched, cond, None, None)?;
        x = x
            .iter()
            .zip(&out.eps)
            .map(|(xi, e)| ddim_inversion_step(xi, e, t, sched))
            .collect::<Result<_>>()?;
        steps.push(out.capture);
    }
    Ok((x, InversionRecord { steps }))
}

/// DDIM sampling from `x_T` down to `x_0`, optionally with FRESCO and
/// per-step feature injection.
pub fn ddim_sample<T: Real>(
    x_t: &[Grid<T>],
    denoiser: &SyntheticDenoiser<T>,
    cond: &Condition<T>,
    sched: &DiffusionSchedule<T>,
    fresco: Option<&FrescoParams<T>>,
    injection: Option<&InversionRecord<T>>,
) -> Result<Vec<Grid<T>>> {
    if let Some(r) = injection {
        ensure!(
            r.steps.len() == sched.steps(),
            "inversion record has {} steps, schedule {}",
            r.steps.len(),
            sched.steps()
        );
    }
    let mut x = x_t.to_vec();
    for t in (1..=sched.steps()).rev() {
        let out = denoiser.apply(&x, t, sched, cond, fresco, injection.map(|r| r.at(t)))?;
        x = x
            .iter()
            .zip(&out.eps)
            .map(|(xi, e)| ddim_step(xi, e, t, sched))
            .collect::<Result<_>>()?;
    }
    Ok(x)
}

/// Single-step forward/backward pass at `t = 1` on clean latents, capturing
/// every layer's input feature and Q, K. `frame_ids` key the noise draw.
pub fn extract_reference_features<T: Real>(
    x0: &[Grid<T>],
    frame_ids: &[usize],
    denoiser: &SyntheticDenoiser<T>,
    cond: &Condition<T>,
    sched: &DiffusionSchedule<T>,
    seed: u64,
) -> Result<LayerCapture<T>> {
    ensure!(x0.len() == frame_ids.len(), "one frame id per latent required");
    let x1 = x0
        .iter()
        .zip(frame_ids)
        .map(|(x, &id)| {
            let eps = frame_noise(seed, NoisePurpose::Reference, id, 1, x.dims());
            ddpm_forward_sample(x, 1, &eps, sched)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(denoiser.apply(&x1, 1, sched, cond, None, None)?.capture)
}
