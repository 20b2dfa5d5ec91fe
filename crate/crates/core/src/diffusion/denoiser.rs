use rayon::prelude::*;

use super::DiffusionSchedule;
use crate::attention::{guided_attention, self_attention_baseline, QkvSet};
use crate::error::{ensure, Result};
use crate::optim::{count_zero_norm_tokens, optimize_features, ConsistencyTargets, FeatureStack};
use crate::pipeline::FrescoParams;
use crate::scalar::Real;
use crate::seeding::{hash_str, normal_vec};
use crate::tensor::{Grid, Matrix};

/// Topology, seed and hook switches of the synthetic noise predictor.
///
/// The network works on the latent grid directly (one token per latent
/// cell). An encoder mixes each 3×3 neighbourhood of the rescaled latent
/// `x_t/√ᾱ_t` and the structure map into `channels` features; the first
/// `latent_channels` of them ("carrier" channels) hold the rescaled latent
/// itself, times `carrier_scale`. Each decoder layer runs attention, an output
/// projection, a residual add and a soft clip `A·tanh(·/A)`, then adds the
/// prompt and timestep biases. The clean estimate `c` is read back from the
/// carrier channels and the prediction is
///
/// ```text
/// ε = g · ρ_t · (x_t − √ᾱ_t c) / √(1−ᾱ_t),   ρ_t = min(1, s·√(1−ᾱ_t))
/// ```
///
/// with `g = output_gain` and `s = denoise_strength`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserSpec {
    pub seed: u64,
    pub layers: usize,
    pub channels: usize,
    pub latent_channels: usize,
    pub carrier_scale: f64,
    /// Weight of the attention output on the carrier channels.
    pub residual_gain: f64,
    /// Scale of the query/key projections.
    pub attention_scale: f64,
    pub denoise_strength: f64,
    pub prompt_scale: f64,
    pub output_gain: f64,
    /// Layers whose input is replaced by the recorded feature on injection.
    pub inject_residual: Vec<bool>,
    /// Layers whose Q and K are replaced by the recorded ones on injection.
    pub inject_qk: Vec<bool>,
    /// Layers where feature optimization runs when FRESCO is active.
    pub optimize_layers: Vec<bool>,
    /// Layers whose self-attention becomes FRESCO-guided when active.
    pub guided_layers: Vec<bool>,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        Self::with_layers(0, 3)
    }
}

impl DenoiserSpec {
    pub fn with_layers(seed: u64, layers: usize) -> Self {
        Self {
            seed,
            layers,
            channels: 16,
            latent_channels: 4,
            carrier_scale: 8.0,
            residual_gain: 1.0,
            attention_scale: 1.0,
            denoise_strength: 3.0,
            prompt_scale: 0.05,
            output_gain: 1.0,
            inject_residual: (0..layers).map(|l| l == 0).collect(),
            inject_qk: vec![true; layers],
            optimize_layers: vec![true; layers],
            guided_layers: vec![true; layers],
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.layers >= 1, "denoiser needs at least one layer");
        ensure!(
            self.channels > self.latent_channels && self.latent_channels >= 1,
            "channels ({}) must exceed latent channels ({})",
            self.channels,
            self.latent_channels
        );
        ensure!(self.carrier_scale > 0.0, "carrier scale must be positive");
        ensure!(self.residual_gain >= 0.0, "residual gain must be non-negative");
        ensure!(self.denoise_strength >= 0.0, "denoise strength must be non-negative");
        for (name, v) in [
            ("inject_residual", &self.inject_residual),
            ("inject_qk", &self.inject_qk),
            ("optimize_layers", &self.optimize_layers),
            ("guided_layers", &self.guided_layers),
        ] {
            ensure!(v.len() == self.layers, "{name} has {} entries for {} layers", v.len(), self.layers);
        }
        Ok(())
    }

    fn saturation(&self) -> f64 {
        4.0 * self.carrier_scale * (1.0 + self.residual_gain).powi(self.layers as i32)
    }
}

/// Per-layer, per-channel prompt bias derived from a hash of the prompt.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptEmbedding<T> {
    pub prompt: String,
    bias: Vec<Vec<T>>,
}

impl<T: Real> PromptEmbedding<T> {
    pub fn new(prompt: &str, spec: &DenoiserSpec) -> Self {
        let scale = T::lit(spec.prompt_scale * spec.carrier_scale);
        let bias = (0..spec.layers)
            .map(|l| {
                normal_vec::<T>(spec.seed, &[PROMPT_STREAM, hash_str(prompt), l as u64], spec.channels)
                    .into_iter()
                    .map(|v| v * scale)
                    .collect()
            })
            .collect();
        Self {
            prompt: prompt.to_owned(),
            bias,
        }
    }

    pub fn layer(&self, l: usize) -> &[T] {
        &self.bias[l]
    }
}

/// Prompt embedding plus one single-channel structure map per frame on the
/// token grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Condition<T> {
    pub prompt: PromptEmbedding<T>,
    pub structure: Vec<Grid<T>>,
}

/// Features seen by the decoder during one pass: each layer's input (after
/// any injection, before optimization) and its Q and K.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerCapture<T> {
    pub features: Vec<FeatureStack<T>>,
    pub q: Vec<Vec<Matrix<T>>>,
    pub k: Vec<Vec<Matrix<T>>>,
}

impl<T: Real> LayerCapture<T> {
    pub fn layers(&self) -> usize {
        self.features.len()
    }

    /// Restrict to a subset of frames, in the given order.
    pub fn select(&self, frames: &[usize]) -> Result<Self> {
        let pick = |v: &Vec<Matrix<T>>| frames.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        Ok(Self {
            features: self
                .features
                .iter()
                .map(|fs| FeatureStack::new(frames.iter().map(|&i| fs.frame(i).clone()).collect()))
                .collect::<Result<_>>()?,
            q: self.q.iter().map(pick).collect(),
            k: self.k.iter().map(pick).collect(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct DenoiserOutput<T> {
    pub eps: Vec<Grid<T>>,
    pub capture: LayerCapture<T>,
    /// Attention output of every layer, `[layer][frame]`.
    pub attention: Vec<Vec<Matrix<T>>>,
    /// Zero-norm tokens met by the spatial loss during this pass.
    pub zero_norm_tokens: usize,
}

const PROMPT_STREAM: u64 = 0x9E0A;
const WEIGHT_STREAM: u64 = 0x3E16;

struct LayerWeights<T> {
    wq: Matrix<T>,
    wk: Matrix<T>,
    wv: Matrix<T>,
    wo: Matrix<T>,
    time_freq: Vec<T>,
    time_phase: Vec<T>,
}

/// Seeded stand-in for the noise-prediction network.
pub struct SyntheticDenoiser<T> {
    spec: DenoiserSpec,
    /// `hidden × (inputs·9)`, inputs = latent channels + structure.
    enc_w: Matrix<T>,
    enc_b: Vec<T>,
    layers: Vec<LayerWeights<T>>,
}

fn seeded_matrix<T: Real>(seed: u64, path: &[u64], rows: usize, cols: usize, scale: f64) -> Matrix<T> {
    let s = T::lit(scale);
    Matrix::from_vec(rows, cols, normal_vec::<T>(seed, path, rows * cols).into_iter().map(|v| v * s).collect())
        .expect("length matches by construction")
}

impl<T: Real> SyntheticDenoiser<T> {
    pub fn new(spec: DenoiserSpec) -> Result<Self> {
        spec.validate()?;
        let (d, lc) = (spec.channels, spec.latent_channels);
        let hidden = d - lc;
        let taps = (lc + 1) * 9;
        let seed = spec.seed;
        let enc_w = seeded_matrix(seed, &[WEIGHT_STREAM, 0], hidden, taps, 2.0 / (taps as f64).sqrt());
        let enc_b = normal_vec(seed, &[WEIGHT_STREAM, 1], hidden);
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let qk_scale = spec.attention_scale * inv_sqrt_d / spec.carrier_scale;
        let layers = (0..spec.layers as u64)
            .map(|l| {
                let p = |k: u64| [WEIGHT_STREAM, 100 + l, k];
                let wq: Matrix<T> = seeded_matrix(seed, &p(0), d, d, qk_scale);
                let wk_noise: Matrix<T> = seeded_matrix(seed, &p(1), d, d, 0.3 * qk_scale);
                let wk = Matrix::from_fn(d, d, |r, c| wq.get(r, c) + wk_noise.get(r, c));
                // carrier outputs copy carrier inputs; hidden outputs mix everything
                let mut wv: Matrix<T> = seeded_matrix(seed, &p(2), d, d, inv_sqrt_d);
                let mut wo: Matrix<T> = seeded_matrix(seed, &p(3), d, d, 0.5 * inv_sqrt_d);
                for r in 0..d {
                    for c in 0..lc {
                        let id = if r == c { T::one() } else { T::zero() };
                        wv.set(r, c, id);
                        wo.set(r, c, id * T::lit(spec.residual_gain));
                    }
                }
                LayerWeights {
                    wq,
                    wk,
                    wv,
                    wo,
                    time_freq: normal_vec::<T>(seed, &p(4), d).into_iter().map(|v| v.abs() * T::lit(0.3)).collect(),
                    time_phase: normal_vec(seed, &p(5), d),
                }
            })
            .collect();
        Ok(Self {
            spec,
            enc_w,
            enc_b,
            layers,
        })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn embed_prompt(&self, prompt: &str) -> PromptEmbedding<T> {
        PromptEmbedding::new(prompt, &self.spec)
    }

    fn encode(&self, x_scaled: &Grid<T>, structure: &Grid<T>) -> Grid<T> {
        let (h, w, lc) = x_scaled.dims();
        let d = self.spec.channels;
        let kappa = T::lit(self.spec.carrier_scale);
        let mut out = Grid::zeros(h, w, d);
        let mut patch = Vec::with_capacity((lc + 1) * 9);
        for y in 0..h {
            for x in 0..w {
                patch.clear();
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        let yy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                        let xx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                        patch.extend_from_slice(x_scaled.pixel(yy, xx));
                        patch.push(structure.get(yy, xx, 0));
                    }
                }
                let cell = out.pixel_mut(y, x);
                for (c, v) in x_scaled.pixel(y, x).iter().enumerate() {
                    cell[c] = kappa * *v;
                }
                for (j, o) in cell[lc..].iter_mut().enumerate() {
                    let z = crate::tensor::dot(self.enc_w.row(j), &patch) + self.enc_b[j];
                    *o = kappa * z.tanh();
                }
            }
        }
        out
    }

    fn check_inputs(
        &self,
        x_t: &[Grid<T>],
        cond: &Condition<T>,
        fresco: Option<&FrescoParams<T>>,
        injection: Option<&LayerCapture<T>>,
    ) -> Result<()> {
        ensure!(!x_t.is_empty(), "denoiser needs at least one frame");
        let (h, w, c) = x_t[0].dims();
        ensure!(
            c == self.spec.latent_channels,
            "latent has {c} channels, denoiser expects {}",
            self.spec.latent_channels
        );
        ensure!(x_t.iter().all(|g| g.dims() == (h, w, c)), "latent frames differ in shape");
        ensure!(
            cond.structure.len() == x_t.len() && cond.structure.iter().all(|s| s.dims() == (h, w, 1)),
            "need one {w}x{h} single-channel structure map per frame"
        );
        if let Some(p) = fresco {
            ensure!(
                p.layout.frames == x_t.len() && p.layout.height == h && p.layout.width == w,
                "FRESCO parameters built for {:?}, latent batch is {}x{}x{}",
                p.layout,
                x_t.len(),
                h,
                w
            );
        }
        if let Some(r) = injection {
            ensure!(r.layers() == self.spec.layers, "injection record has {} layers", r.layers());
            ensure!(
                r.features.iter().all(|f| f.shape() == (x_t.len(), h, w, self.spec.channels)),
                "injection features do not match the batch"
            );
        }
        Ok(())
    }

    /// One forward pass over a batch of latents at timestep `t`.
    pub fn apply(
        &self,
        x_t: &[Grid<T>],
        t: usize,
        sched: &DiffusionSchedule<T>,
        cond: &Condition<T>,
        fresco: Option<&FrescoParams<T>>,
        injection: Option<&LayerCapture<T>>,
    ) -> Result<DenoiserOutput<T>> {
        self.apply_with_attention(x_t, t, sched, cond, fresco, injection, None)
    }

    /// [`Self::apply`] with the attention outputs of every layer optionally
    /// supplied from outside (`attention[layer][frame]`), as done for frames
    /// that receive propagated keyframe features.
    #[allow(clippy::too_many_arguments)]
    pub fn apply_with_attention(
        &self,
        x_t: &[Grid<T>],
        t: usize,
        sched: &DiffusionSchedule<T>,
        cond: &Condition<T>,
        fresco: Option<&FrescoParams<T>>,
        injection: Option<&LayerCapture<T>>,
        attention: Option<&[Vec<Matrix<T>>]>,
    ) -> Result<DenoiserOutput<T>> {
        self.check_inputs(x_t, cond, fresco, injection)?;
        if let Some(a) = attention {
            ensure!(
                a.len() == self.spec.layers && a.iter().all(|l| l.len() == x_t.len()),
                "attention override needs one matrix per layer and frame"
            );
        }
        ensure!(t <= sched.steps(), "timestep {t} beyond schedule length {}", sched.steps());
        let spec = &self.spec;
        let (h, w, lc) = x_t[0].dims();
        let d = spec.channels;
        let ab = sched.alpha_bar(t);
        let inv_sqrt_ab = T::one() / ab.sqrt();

        let mut f: Vec<Grid<T>> = x_t
            .par_iter()
            .zip(cond.structure.par_iter())
            .map(|(x, e)| self.encode(&x.map(|v| v * inv_sqrt_ab), e))
            .collect();

        let sat = T::lit(spec.saturation());
        let mut capture = LayerCapture {
            features: Vec::with_capacity(spec.layers),
            q: Vec::with_capacity(spec.layers),
            k: Vec::with_capacity(spec.layers),
        };
        let mut zero_norm_tokens = 0;
        let mut attention_out = Vec::with_capacity(spec.layers);
        let tt = T::from_usize_lossy(t);

        for (l, lw) in self.layers.iter().enumerate() {
            if let (Some(rec), true) = (injection, spec.inject_residual[l]) {
                f = rec.features[l].frames().to_vec();
            }
            let stack = FeatureStack::new(f)?;
            capture.features.push(stack.clone());

            let mut stack = stack;
            if let Some(p) = fresco {
                if spec.optimize_layers[l] && p.optimizes_at(t) {
                    let reference = if p.flags.spatial_loss {
                        let r = p.reference_features(l)?;
                        zero_norm_tokens += count_zero_norm_tokens(&stack) + count_zero_norm_tokens(r);
                        Some(r)
                    } else {
                        None
                    };
                    let (flows, masks) = if p.flags.temporal_loss {
                        (&p.flows[..], &p.masks[..])
                    } else {
                        (&[][..], &[][..])
                    };
                    let lambda = if p.flags.spatial_loss { p.optim.lambda_spat } else { 0.0 };
                    let cfg = crate::optim::OptimConfig {
                        lambda_spat: lambda,
                        ..p.optim
                    };
                    stack = optimize_features(&stack, ConsistencyTargets::new(flows, masks, reference), &cfg)?;
                }
            }
            let f_in = stack.into_frames();

            let mats: Vec<Matrix<T>> = f_in.iter().map(|g| g.to_matrix()).collect();
            let (mut q, mut k): (Vec<Matrix<T>>, Vec<Matrix<T>>) =
                mats.par_iter().map(|m| (m.matmul(&lw.wq), m.matmul(&lw.wk))).unzip();
            let v: Vec<Matrix<T>> = mats.par_iter().map(|m| m.matmul(&lw.wv)).collect();
            if let (Some(rec), true) = (injection, spec.inject_qk[l]) {
                q = rec.q[l].clone();
                k = rec.k[l].clone();
            }
            capture.q.push(q.clone());
            capture.k.push(k.clone());

            let qkv = QkvSet::new(q, k, v)?;
            let guided = fresco.filter(|p| spec.guided_layers[l] && p.stages().any());
            let heads = match (attention, guided) {
                (Some(a), _) => a[l].clone(),
                (None, Some(p)) => {
                    let qkv = if p.stages().spatial || p.attn.editing_mode {
                        let (qr, kr) = p.reference_qk(l, injection)?;
                        qkv.with_reference(qr.to_vec(), kr.to_vec())?
                    } else {
                        qkv
                    };
                    guided_attention(&qkv, &p.index.unique, &p.index.chains, &p.attn, p.stages())?
                }
                (None, None) => self_attention_baseline(&qkv),
            };

            let bias = cond.prompt.layer(l);
            let time: Vec<T> = (0..d)
                .map(|c| {
                    if c < lc {
                        T::zero()
                    } else {
                        T::lit(0.5 * spec.carrier_scale) * (tt * lw.time_freq[c] + lw.time_phase[c]).sin()
                    }
                })
                .collect();
            let next = f_in
                .par_iter()
                .zip(heads.par_iter())
                .map(|(fi, hd)| {
                    let out = hd.matmul(&lw.wo);
                    let mut g = fi.clone();
                    for (i, cell) in (0..g.cells()).map(|i| (i, out.row(i))) {
                        for (c, (o, &a)) in g.cell_mut(i).iter_mut().zip(cell).enumerate() {
                            *o = sat * ((*o + a) / sat).tanh() + bias[c] + time[c];
                        }
                    }
                    g
                })
                .collect();
            f = next;
            attention_out.push(heads);
        }

        let norm = T::one() / T::lit(spec.carrier_scale * (1.0 + spec.residual_gain).powi(spec.layers as i32));
        let one_m = (T::one() - ab).max(T::zero());
        let rho = if one_m > T::zero() {
            (T::lit(spec.denoise_strength) * one_m.sqrt()).min(T::one()) / one_m.sqrt()
        } else {
            T::zero()
        };
        let gain = T::lit(spec.output_gain) * rho;
        let sqrt_ab = ab.sqrt();
        let eps = x_t
            .iter()
            .zip(&f)
            .map(|(x, feat)| {
                let mut e = Grid::zeros(h, w, lc);
                for i in 0..x.cells() {
                    let fc = feat.cell(i);
                    for (c, (o, &xv)) in e.cell_mut(i).iter_mut().zip(x.cell(i)).enumerate() {
                        *o = gain * (xv - sqrt_ab * fc[c] * norm);
                    }
                }
                e
            })
            .collect();
        Ok(DenoiserOutput {
            eps,
            capture,
            attention: attention_out,
            zero_norm_tokens,
        })
    }
}
