use std::collections::HashMap;

use rayon::prelude::*;

use super::{build_fresco_params, estimate_correspondence, FrescoParams, Mode, Propagation, RunConfig};
use crate::correspondence::{ClipCorrespondence, FlowField, OcclusionMask, TokenLayout};
use crate::diffusion::{
    ddim_invert, ddim_step, ddpm_forward_sample, ddpm_step, extract_reference_features, frame_noise, make_schedule,
    Condition, DiffusionSchedule, InversionRecord, LatentCodec, LayerCapture, NoisePurpose, SyntheticDenoiser,
};
use crate::error::{ensure, FrescoError, Result};
use crate::media::{extract_structure, FrameSequence};
use crate::scalar::Real;
use crate::scheduler::{
    batch_plan, cyclic_schedule, interpolate_nonkeyframes, propagate_tokens, select_keyframes, BatchPlan,
    CyclicSchedule, KeyframePlan,
};
use crate::tensor::{Grid, Matrix};

/// Latents of one frame at every timestep of a run; `at(t)` is `x_t`.
/// Timesteps above the start step stay empty.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    steps: Vec<Option<Grid<T>>>,
}

impl<T: Real> Trajectory<T> {
    fn new(len: usize) -> Self {
        Self { steps: vec![None; len + 1] }
    }

    pub fn at(&self, t: usize) -> Option<&Grid<T>> {
        self.steps.get(t).and_then(Option::as_ref)
    }

    /// Timesteps with a recorded latent, descending.
    pub fn timesteps(&self) -> Vec<usize> {
        (0..self.steps.len()).rev().filter(|&t| self.steps[t].is_some()).collect()
    }
}

/// One batch (or window): its pixel frames, their global indices and the
/// clip-wide correspondence used to link any two members.
#[derive(Clone, Copy, Debug)]
pub struct BatchInput<'a, T> {
    pub frames: &'a [Grid<T>],
    pub ids: &'a [usize],
    pub corr: &'a ClipCorrespondence<T>,
}

impl<T: Real> BatchInput<'_, T> {
    /// Flows and masks between consecutive members of `slots` (batch
    /// positions), labelled with their position in `slots`.
    fn chain(&self, slots: &[usize]) -> Result<(Vec<FlowField<T>>, Vec<OcclusionMask>)> {
        let mut flows = Vec::with_capacity(slots.len().saturating_sub(1));
        let mut masks = Vec::with_capacity(flows.capacity());
        for (j, w) in slots.windows(2).enumerate() {
            let (f, m) = self.corr.between(self.ids[w[0]], self.ids[w[1]])?;
            flows.push(f.relabel(j, j + 1));
            masks.push(m.relabel(j, j + 1));
        }
        Ok((flows, masks))
    }
}

/// Inter-batch anchoring: slots whose latents are overwritten from a recorded
/// trajectory at every timestep, and slots whose trajectory is recorded.
#[derive(Clone, Debug, Default)]
pub struct Anchors<'a, T> {
    pub pinned: Vec<(usize, &'a Trajectory<T>)>,
    pub record: Vec<usize>,
}

/// Result of one batch.
#[derive(Clone, Debug)]
pub struct BatchOutput<T> {
    pub latents: Vec<Grid<T>>,
    pub frames: Vec<Grid<T>>,
    /// One per slot in [`Anchors::record`], same order.
    pub trajectories: Vec<Trajectory<T>>,
    pub inversion: Option<InversionRecord<T>>,
    pub zero_norm_tokens: usize,
}

/// Frames produced by a run plus artefacts worth persisting.
#[derive(Clone, Debug)]
pub struct RunOutput<T> {
    pub frames: FrameSequence<T>,
    /// One record per batch in editing runs.
    pub inversions: Vec<InversionRecord<T>>,
    /// Keyframes of long-video runs.
    pub keyframes: Option<KeyframePlan>,
    /// Batches (over keyframe positions, or over frames for token
    /// propagation) of long-video runs.
    pub batches: Option<BatchPlan>,
}

impl<T> RunOutput<T> {
    /// Plain-text plan: keyframes, batches and, for token propagation, the
    /// per-step keyframe sets of a full window.
    pub fn plan_text(&self, cyclic: Option<&CyclicSchedule>) -> String {
        let mut s = String::new();
        if let Some(k) = &self.keyframes {
            s.push_str(&k.to_text());
        }
        if let Some(b) = &self.batches {
            s.push_str(&b.to_text());
        }
        if let Some(c) = cyclic {
            s.push_str(&c.to_text());
        }
        s
    }
}

/// Denoiser, codec and schedule built from a [`RunConfig`].
pub struct Engine<T> {
    pub cfg: RunConfig,
    pub denoiser: SyntheticDenoiser<T>,
    pub codec: LatentCodec<T>,
    pub sched: DiffusionSchedule<T>,
}

/// 2× average pool.
fn pool2<T: Real>(g: &Grid<T>) -> Grid<T> {
    let q = T::lit(0.25);
    Grid::from_fn(g.height() / 2, g.width() / 2, g.channels(), |y, x, c| {
        q * (g.get(2 * y, 2 * x, c) + g.get(2 * y, 2 * x + 1, c) + g.get(2 * y + 1, 2 * x, c)
            + g.get(2 * y + 1, 2 * x + 1, c))
    })
}

fn pick<V: Clone>(v: &[V], idx: &[usize]) -> Vec<V> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

fn sub_condition<T: Real>(c: &Condition<T>, idx: &[usize]) -> Condition<T> {
    Condition {
        prompt: c.prompt.clone(),
        structure: pick(&c.structure, idx),
    }
}

/// Everything fixed for a batch before sampling starts.
struct Prepared<T> {
    x0: Vec<Grid<T>>,
    cond: Condition<T>,
    source_cond: Condition<T>,
}

impl<T: Real> Engine<T> {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let denoiser = SyntheticDenoiser::new(cfg.denoiser.clone())?;
        let codec = LatentCodec::new(cfg.codec_seed, cfg.denoiser.latent_channels)?;
        let sched = make_schedule(cfg.steps, cfg.beta_first, cfg.beta_last)?;
        Ok(Self {
            cfg,
            denoiser,
            codec,
            sched,
        })
    }

    pub fn encode_all(&self, frames: &[Grid<T>]) -> Result<Vec<Grid<T>>> {
        frames.par_iter().map(|f| self.codec.encode(f)).collect()
    }

    /// Decode and clamp to `[0, 1]`.
    pub fn decode_all(&self, latents: &[Grid<T>]) -> Result<Vec<Grid<T>>> {
        latents
            .par_iter()
            .map(|z| Ok(self.codec.decode(z)?.map(|v| v.max(T::zero()).min(T::one()))))
            .collect()
    }

    /// Edge maps pooled to the latent grid.
    pub fn structure_maps(&self, frames: &[Grid<T>]) -> Vec<Grid<T>> {
        frames.par_iter().map(|f| pool2(&extract_structure(f))).collect()
    }

    pub fn condition(&self, prompt: &str, structure: Vec<Grid<T>>) -> Condition<T> {
        Condition {
            prompt: self.denoiser.embed_prompt(prompt),
            structure,
        }
    }

    /// Block-matching correspondence unless one is supplied.
    pub fn correspondence(
        &self,
        video: &FrameSequence<T>,
        supplied: Option<&ClipCorrespondence<T>>,
    ) -> Result<ClipCorrespondence<T>> {
        match supplied {
            Some(c) => {
                c.check(video.len(), video.height(), video.width())?;
                Ok(c.clone())
            }
            None => estimate_correspondence(video.frames(), self.cfg.flow),
        }
    }

    fn prepare(&self, input: &BatchInput<'_, T>) -> Result<Prepared<T>> {
        ensure!(!input.frames.is_empty(), "empty batch");
        ensure!(input.ids.len() == input.frames.len(), "one global id per batch frame required");
        let x0 = self.encode_all(input.frames)?;
        let structure = self.structure_maps(input.frames);
        Ok(Prepared {
            x0,
            source_cond: self.condition(&self.cfg.source_prompt, structure.clone()),
            cond: self.condition(&self.cfg.prompt, structure),
        })
    }

    fn needs_reference(&self, mode: Mode) -> bool {
        let f = self.cfg.flags_for(mode);
        match mode {
            Mode::Edit => f.spatial_loss,
            _ => f.spatial_loss || f.spatial_attn,
        }
    }

    /// FRESCO parameters for the batch members `slots`, or `None` when every
    /// adaptation is off. `reference` supplies the single-step capture of the
    /// whole batch when one is needed.
    fn fresco_for(
        &self,
        mode: Mode,
        input: &BatchInput<'_, T>,
        slots: &[usize],
        latent_dims: (usize, usize),
        reference: &mut dyn FnMut() -> Result<LayerCapture<T>>,
    ) -> Result<Option<FrescoParams<T>>> {
        let settings = self.cfg.fresco_settings(mode);
        if !settings.flags.any() {
            return Ok(None);
        }
        let layout = TokenLayout {
            frames: slots.len(),
            height: latent_dims.0,
            width: latent_dims.1,
        };
        let reference = if self.needs_reference(mode) {
            Some(reference()?.select(slots)?)
        } else {
            None
        };
        let (flows, masks) = input.chain(slots)?;
        build_fresco_params(&flows, &masks, layout, reference, &settings).map(Some)
    }

    /// Manipulate one batch in `mode` (translate or edit); every member is a
    /// keyframe.
    pub fn run_batch(
        &self,
        mode: Mode,
        input: &BatchInput<'_, T>,
        anchors: &Anchors<'_, T>,
    ) -> Result<BatchOutput<T>> {
        self.sample(mode, input, anchors, None)
    }

    /// Manipulate one window with a cyclic keyframe schedule: at each step
    /// the scheduled keyframes run a FRESCO pass and the other frames receive
    /// their attention outputs by token propagation.
    pub fn run_window(
        &self,
        mode: Mode,
        input: &BatchInput<'_, T>,
        anchors: &Anchors<'_, T>,
        schedule: &CyclicSchedule,
    ) -> Result<BatchOutput<T>> {
        ensure!(
            schedule.frames == input.frames.len(),
            "schedule covers {} frames, window has {}",
            schedule.frames,
            input.frames.len()
        );
        self.sample(mode, input, anchors, Some(schedule))
    }

    fn sample(
        &self,
        mode: Mode,
        input: &BatchInput<'_, T>,
        anchors: &Anchors<'_, T>,
        schedule: Option<&CyclicSchedule>,
    ) -> Result<BatchOutput<T>> {
        ensure!(mode != Mode::Long, "a batch is manipulated in translate or edit mode");
        let prep = self.prepare(input)?;
        let n = prep.x0.len();
        let (lh, lw, _) = prep.x0[0].dims();
        let all: Vec<usize> = (0..n).collect();
        let steps = self.sched.steps();

        let mut reference_cache: Option<LayerCapture<T>> = None;
        let mut reference = || -> Result<LayerCapture<T>> {
            if reference_cache.is_none() {
                reference_cache = Some(extract_reference_features(
                    &prep.x0,
                    input.ids,
                    &self.denoiser,
                    &prep.source_cond,
                    &self.sched,
                    self.cfg.seed,
                )?);
            }
            Ok(reference_cache.clone().expect("filled above"))
        };

        // FRESCO parameters per distinct keyframe set.
        let key_sets: Vec<Vec<usize>> = match schedule {
            None => vec![all.clone()],
            Some(s) => (0..s.cycle_length()).map(|k| s.keyframes(k)).collect(),
        };
        let mut params: HashMap<Vec<usize>, Option<FrescoParams<T>>> = HashMap::new();
        for keys in &key_sets {
            if !params.contains_key(keys) {
                let p = self.fresco_for(mode, input, keys, (lh, lw), &mut reference)?;
                params.insert(keys.clone(), p);
            }
        }
        // Source features that define the nearest-neighbour fields.
        let nn_source = match schedule {
            Some(_) => Some(reference()?),
            None => None,
        };

        let mut trajectories: Vec<Trajectory<T>> = anchors.record.iter().map(|_| Trajectory::new(steps)).collect();
        let pin_and_record = |x: &mut [Grid<T>], t: usize, trajectories: &mut [Trajectory<T>]| -> Result<()> {
            for (slot, traj) in &anchors.pinned {
                let g = traj
                    .at(t)
                    .ok_or_else(|| FrescoError::contract(format!("anchor trajectory has no latent at t={t}")))?;
                ensure!(*slot < x.len() && g.same_shape(&x[*slot]), "anchor does not fit the batch");
                x[*slot] = g.clone();
            }
            for (traj, &slot) in trajectories.iter_mut().zip(&anchors.record) {
                traj.steps[t] = Some(x[slot].clone());
            }
            Ok(())
        };

        let (mut x, inversion, start) = match mode {
            Mode::Translate => {
                let start = self.cfg.start_step();
                let x = prep
                    .x0
                    .iter()
                    .zip(input.ids)
                    .map(|(z, &id)| {
                        let eps = frame_noise(self.cfg.seed, NoisePurpose::Start, id, start, z.dims());
                        ddpm_forward_sample(z, start, &eps, &self.sched)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (x, None, start)
            }
            _ => {
                let (x_t, record) = ddim_invert(&prep.x0, &self.denoiser, &prep.source_cond, &self.sched)?;
                (x_t, Some(record), steps)
            }
        };
        let cond = &prep.cond;
        pin_and_record(&mut x, start, &mut trajectories)?;

        let mut zero_norm_tokens = 0;
        for t in (1..=start).rev() {
            let keys = &key_sets[(start - t) % key_sets.len()];
            let fresco = params[keys].as_ref();
            let injection = inversion.as_ref().map(|r| r.at(t));
            let eps = if keys.len() == n {
                let out = self.denoiser.apply(&x, t, &self.sched, cond, fresco, injection)?;
                zero_norm_tokens += out.zero_norm_tokens;
                out.eps
            } else {
                let inj_keys = injection.map(|c| c.select(keys)).transpose()?;
                let out = self.denoiser.apply(
                    &pick(&x, keys),
                    t,
                    &self.sched,
                    &sub_condition(cond, keys),
                    fresco,
                    inj_keys.as_ref(),
                )?;
                zero_norm_tokens += out.zero_norm_tokens;
                let others: Vec<usize> = all.iter().copied().filter(|i| keys.binary_search(i).is_err()).collect();
                let src = nn_source.as_ref().expect("window runs keep source features");
                let propagated: Vec<Vec<Matrix<T>>> = (0..out.attention.len())
                    .map(|l| {
                        let source: Vec<Matrix<T>> = src.features[l].frames().iter().map(Grid::to_matrix).collect();
                        let full = propagate_tokens(&source, &out.attention[l], keys)?;
                        Ok(pick(&full, &others))
                    })
                    .collect::<Result<_>>()?;
                let inj_others = injection.map(|c| c.select(&others)).transpose()?;
                let rest = self.denoiser.apply_with_attention(
                    &pick(&x, &others),
                    t,
                    &self.sched,
                    &sub_condition(cond, &others),
                    None,
                    inj_others.as_ref(),
                    Some(&propagated),
                )?;
                let mut eps = vec![None; n];
                for (&i, e) in keys.iter().zip(out.eps) {
                    eps[i] = Some(e);
                }
                for (&i, e) in others.iter().zip(rest.eps) {
                    eps[i] = Some(e);
                }
                eps.into_iter().map(|e| e.expect("every frame covered")).collect()
            };
            x = match mode {
                Mode::Translate => x
                    .iter()
                    .zip(&eps)
                    .zip(input.ids)
                    .map(|((xi, e), &id)| {
                        let fresh = frame_noise(self.cfg.seed, NoisePurpose::Step, id, t, xi.dims());
                        ddpm_step(xi, e, t, &fresh, &self.sched)
                    })
                    .collect::<Result<_>>()?,
                _ => x
                    .iter()
                    .zip(&eps)
                    .map(|(xi, e)| ddim_step(xi, e, t, &self.sched))
                    .collect::<Result<_>>()?,
            };
            pin_and_record(&mut x, t - 1, &mut trajectories)?;
        }
        if zero_norm_tokens > 0 {
            log::warn!("spatial loss met {zero_norm_tokens} zero-norm token vectors");
        }
        let frames = self.decode_all(&x)?;
        Ok(BatchOutput {
            latents: x,
            frames,
            trajectories,
            inversion,
            zero_norm_tokens,
        })
    }

    /// Translate or edit a clip in consecutive chunks of `batch_size` frames.
    pub fn manipulate(
        &self,
        mode: Mode,
        video: &FrameSequence<T>,
        supplied: Option<&ClipCorrespondence<T>>,
    ) -> Result<RunOutput<T>> {
        let corr = self.correspondence(video, supplied)?;
        let frames = video.frames();
        let mut out_frames = Vec::with_capacity(frames.len());
        let mut inversions = Vec::new();
        let ids: Vec<usize> = (0..frames.len()).collect();
        for chunk in ids.chunks(self.cfg.batch_size) {
            let input = BatchInput {
                frames: &frames[chunk[0]..chunk[0] + chunk.len()],
                ids: chunk,
                corr: &corr,
            };
            let out = self.run_batch(mode, &input, &Anchors::default())?;
            out_frames.extend(out.frames);
            inversions.extend(out.inversion);
        }
        Ok(RunOutput {
            frames: FrameSequence::from_clamped(out_frames, video.frame_rate())?,
            inversions,
            keyframes: None,
            batches: None,
        })
    }

    /// Run anchored batches over `ids` (global frame indices), sequentially:
    /// batch `k ≥ 2` substitutes its two anchor slots with the trajectories
    /// recorded in earlier batches. With `windows`, each batch runs with a
    /// cyclic keyframe schedule.
    fn run_anchored(
        &self,
        video: &FrameSequence<T>,
        ids: &[usize],
        corr: &ClipCorrespondence<T>,
        windows: bool,
    ) -> Result<(Vec<Grid<T>>, BatchPlan, Vec<InversionRecord<T>>)> {
        let mode = self.cfg.long_base;
        let plan = batch_plan(ids.len(), self.cfg.batch_size)?;
        let mut recorded: HashMap<(usize, usize), Trajectory<T>> = HashMap::new();
        let mut frames: Vec<Option<Grid<T>>> = vec![None; ids.len()];
        let mut inversions = Vec::new();
        for (k, batch) in plan.batches.iter().enumerate() {
            let batch_ids: Vec<usize> = batch.iter().map(|&p| ids[p]).collect();
            let batch_frames: Vec<Grid<T>> = batch_ids.iter().map(|&i| video.frame(i).clone()).collect();
            let pinned = plan
                .anchors(k)
                .into_iter()
                .map(|a| {
                    recorded
                        .get(&(a.batch, a.source_slot))
                        .map(|t| (a.slot, t))
                        .ok_or_else(|| FrescoError::contract("anchor trajectory was not recorded"))
                })
                .collect::<Result<Vec<_>>>()?;
            let record = plan.recorded_slots(k);
            let anchors = Anchors {
                pinned,
                record: record.clone(),
            };
            let input = BatchInput {
                frames: &batch_frames,
                ids: &batch_ids,
                corr,
            };
            let out = match self.schedule_for(batch.len()) {
                Some(schedule) if windows => self.run_window(mode, &input, &anchors, &schedule)?,
                _ => self.run_batch(mode, &input, &anchors)?,
            };
            for (slot, traj) in record.into_iter().zip(out.trajectories) {
                recorded.insert((k, slot), traj);
            }
            for (&p, f) in batch.iter().zip(out.frames) {
                // Anchors repeat earlier frames; the first result is kept.
                frames[p].get_or_insert(f);
            }
            inversions.extend(out.inversion);
        }
        let frames = frames
            .into_iter()
            .map(|f| f.ok_or_else(|| FrescoError::contract("batch plan left a position uncovered")))
            .collect::<Result<_>>()?;
        Ok((frames, plan, inversions))
    }

    /// Anchored cyclic schedule for a window of `len` frames, or `None` when
    /// every frame of it is a keyframe anyway.
    pub fn schedule_for(&self, len: usize) -> Option<CyclicSchedule> {
        let per_step = self.cfg.keyframes_per_step;
        if len < 3 || len <= per_step {
            return None;
        }
        cyclic_schedule(len, per_step.saturating_sub(2).clamp(1, len - 2), true).ok()
    }

    /// Long-video run: keyframe selection and anchored batches, with the
    /// propagation strategy of the config.
    pub fn run_long(&self, video: &FrameSequence<T>, supplied: Option<&ClipCorrespondence<T>>) -> Result<RunOutput<T>> {
        let corr = self.correspondence(video, supplied)?;
        let rate = video.frame_rate();
        if self.cfg.propagation == Propagation::Tokens || video.len() < 2 {
            let ids: Vec<usize> = (0..video.len()).collect();
            let (frames, plan, inversions) = self.run_anchored(video, &ids, &corr, true)?;
            return Ok(RunOutput {
                frames: FrameSequence::from_clamped(frames, rate)?,
                inversions,
                keyframes: None,
                batches: Some(plan),
            });
        }
        let keys = select_keyframes(video, self.cfg.s_min, self.cfg.s_max)?;
        let windows = self.cfg.propagation == Propagation::ThreeLevel;
        let (edited, plan, inversions) = self.run_anchored(video, &keys.keyframes, &corr, windows)?;
        let frames = interpolate_nonkeyframes(video, &edited, &keys, &corr)?;
        Ok(RunOutput {
            frames,
            inversions,
            keyframes: Some(keys),
            batches: Some(plan),
        })
    }

    /// Dispatch on the configured mode.
    pub fn run(&self, video: &FrameSequence<T>, supplied: Option<&ClipCorrespondence<T>>) -> Result<RunOutput<T>> {
        match self.cfg.mode {
            Mode::Long => self.run_long(video, supplied),
            m => self.manipulate(m, video, supplied),
        }
    }
}

/// Translate a clip: SDEdit start at `round(strength·T)`, then DDPM
/// sampling with FRESCO.
pub fn translate_video<T: Real>(
    video: &FrameSequence<T>,
    cfg: &RunConfig,
    supplied: Option<&ClipCorrespondence<T>>,
) -> Result<RunOutput<T>> {
    Engine::new(cfg.clone())?.manipulate(Mode::Translate, video, supplied)
}

/// Edit a clip: DDIM inversion with recording, then DDIM sampling with
/// feature injection and editing-mode FRESCO.
pub fn edit_video<T: Real>(
    video: &FrameSequence<T>,
    cfg: &RunConfig,
    supplied: Option<&ClipCorrespondence<T>>,
) -> Result<RunOutput<T>> {
    Engine::new(cfg.clone())?.manipulate(Mode::Edit, video, supplied)
}

/// Long-video run with the configured propagation.
pub fn run_long_video<T: Real>(
    video: &FrameSequence<T>,
    cfg: &RunConfig,
    supplied: Option<&ClipCorrespondence<T>>,
) -> Result<RunOutput<T>> {
    Engine::new(cfg.clone())?.run_long(video, supplied)
}
