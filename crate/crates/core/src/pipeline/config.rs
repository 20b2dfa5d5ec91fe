use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use ini::Ini;

use super::{FrescoFlags, FrescoSettings};
use crate::attention::AttnConfig;
use crate::correspondence::FlowConfig;
use crate::diffusion::DenoiserSpec;
use crate::error::{ensure, FrescoError, Result};
use crate::optim::OptimConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Translate,
    Edit,
    Long,
}

impl FromStr for Mode {
    type Err = FrescoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "translate" => Ok(Mode::Translate),
            "edit" => Ok(Mode::Edit),
            "long" => Ok(Mode::Long),
            _ => Err(FrescoError::contract(format!("unknown mode `{s}`"))),
        }
    }
}

impl Mode {
    pub fn name(&self) -> &'static str {
        match self {
            Mode::Translate => "translate",
            Mode::Edit => "edit",
            Mode::Long => "long",
        }
    }
}

/// How long-video runs fill in non-keyframes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Propagation {
    /// Keyframes only, then flow-warp interpolation.
    Warp,
    /// Windows with cyclic keyframes; other frames receive propagated
    /// attention outputs inside the sampling loop.
    Tokens,
    /// Keyframes, token propagation to a denser frame set, then warp
    /// interpolation.
    ThreeLevel,
}

impl FromStr for Propagation {
    type Err = FrescoError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warp" => Ok(Propagation::Warp),
            "tokens" => Ok(Propagation::Tokens),
            "three-level" => Ok(Propagation::ThreeLevel),
            _ => Err(FrescoError::contract(format!("unknown propagation `{s}`"))),
        }
    }
}

impl Propagation {
    pub fn name(&self) -> &'static str {
        match self {
            Propagation::Warp => "warp",
            Propagation::Tokens => "tokens",
            Propagation::ThreeLevel => "three-level",
        }
    }
}

/// Everything a run depends on besides the input frames.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    /// Keyframe manipulation used inside long-video runs.
    pub long_base: Mode,
    pub prompt: String,
    /// Prompt describing the input; conditions inversion and reference passes.
    pub source_prompt: String,
    /// SDEdit start step as a fraction of the schedule length.
    pub strength: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub beta_first: f64,
    pub beta_last: f64,
    pub seed: u64,
    pub codec_seed: u64,
    pub denoiser: DenoiserSpec,
    /// `None` selects the mode default (everything on; editing drops the
    /// spatial loss).
    pub flags: Option<FrescoFlags>,
    pub attn: AttnConfig,
    pub optim: OptimConfig,
    pub opt_timesteps: Option<Vec<usize>>,
    pub flow: FlowConfig,
    pub s_min: usize,
    pub s_max: usize,
    pub propagation: Propagation,
    /// Keyframes per timestep in token propagation, anchors included.
    pub keyframes_per_step: usize,
    pub metrics: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Translate,
            long_base: Mode::Translate,
            prompt: "a watercolor painting".into(),
            source_prompt: String::new(),
            strength: 0.75,
            batch_size: 8,
            steps: 20,
            beta_first: 1e-4,
            beta_last: 0.02,
            seed: 0,
            codec_seed: 7,
            denoiser: DenoiserSpec::default(),
            flags: None,
            attn: AttnConfig::default(),
            optim: OptimConfig::default(),
            opt_timesteps: None,
            flow: FlowConfig::default(),
            s_min: 2,
            s_max: 6,
            propagation: Propagation::Warp,
            keyframes_per_step: 4,
            metrics: true,
        }
    }
}

fn parse<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| FrescoError::contract(format!("config: cannot parse `{key}` value `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(FrescoError::contract(format!("config: `{key}` expects a boolean, got `{v}`"))),
    }
}

fn parse_list<V: FromStr>(key: &str, v: &str) -> Result<Vec<V>> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn bool_list(v: &[bool]) -> String {
    v.iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(",")
}

fn flags_string(f: &FrescoFlags) -> String {
    let names = [
        (f.temporal_loss, "temporal_loss"),
        (f.spatial_loss, "spatial_loss"),
        (f.spatial_attn, "spatial_attn"),
        (f.cross_frame, "cross_frame"),
        (f.temporal_attn, "temporal_attn"),
    ];
    let on: Vec<&str> = names.iter().filter(|(b, _)| *b).map(|(_, n)| *n).collect();
    if on.is_empty() {
        "none".into()
    } else {
        on.join(",")
    }
}

impl RunConfig {
    /// Flags in effect for the given manipulation mode.
    pub fn flags_for(&self, mode: Mode) -> FrescoFlags {
        self.flags.unwrap_or(match mode {
            Mode::Edit => FrescoFlags {
                spatial_loss: false,
                ..FrescoFlags::ALL
            },
            _ => FrescoFlags::ALL,
        })
    }

    pub fn fresco_settings(&self, mode: Mode) -> FrescoSettings {
        FrescoSettings {
            flags: self.flags_for(mode),
            attn: AttnConfig {
                editing_mode: mode == Mode::Edit,
                ..self.attn
            },
            optim: self.optim,
            opt_timesteps: self.opt_timesteps.clone(),
        }
    }

    /// SDEdit start step `t̂ = round(strength · T)`.
    pub fn start_step(&self) -> usize {
        (self.strength * self.steps as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.strength),
            "strength must lie in [0, 1], got {}",
            self.strength
        );
        ensure!(self.batch_size >= 1, "batch size must be at least 1");
        ensure!(
            self.mode != Mode::Long || self.batch_size >= 3,
            "long-video runs need a batch size of at least 3"
        );
        ensure!(self.long_base != Mode::Long, "long_base must be translate or edit");
        ensure!(
            1 <= self.s_min && self.s_min <= self.s_max,
            "need 1 ≤ s_min ≤ s_max, got {} and {}",
            self.s_min,
            self.s_max
        );
        ensure!(self.keyframes_per_step >= 2, "keyframes_per_step must be at least 2");
        self.attn.validate()?;
        self.optim.validate()?;
        self.denoiser.validate()?;
        Ok(())
    }

    /// Parse `key = value` lines; section headers are accepted and ignored,
    /// so keys may be grouped freely. Unknown keys are errors.
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| FrescoError::contract(format!("config: {e}")))?;
        let mut cfg = RunConfig::default();
        let mut pending: Vec<(String, String)> = Vec::new();
        for (_, props) in ini.iter() {
            for (k, v) in props.iter() {
                if k == "layers" {
                    // resizes the per-layer tables, so it goes first
                    cfg.set(k, v)?;
                } else {
                    pending.push((k.to_owned(), v.to_owned()));
                }
            }
        }
        for (k, v) in &pending {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_ini_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FrescoError::io(path, e))?;
        Self::from_ini_str(&text)
    }

    /// Set one key.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let d = &mut self.denoiser;
        match key {
            "mode" => self.mode = parse(key, v)?,
            "long_base" => self.long_base = parse(key, v)?,
            "prompt" => self.prompt = v.trim().to_owned(),
            "source_prompt" => self.source_prompt = v.trim().to_owned(),
            "strength" => self.strength = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "beta_first" => self.beta_first = parse(key, v)?,
            "beta_last" => self.beta_last = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "codec_seed" => self.codec_seed = parse(key, v)?,
            "denoiser_seed" => d.seed = parse(key, v)?,
            "layers" => *d = DenoiserSpec::with_layers(d.seed, parse(key, v)?),
            "channels" => d.channels = parse(key, v)?,
            "carrier_scale" => d.carrier_scale = parse(key, v)?,
            "residual_gain" => d.residual_gain = parse(key, v)?,
            "attention_scale" => d.attention_scale = parse(key, v)?,
            "denoise_strength" => d.denoise_strength = parse(key, v)?,
            "prompt_scale" => d.prompt_scale = parse(key, v)?,
            "output_gain" => d.output_gain = parse(key, v)?,
            "inject_residual" => d.inject_residual = parse_list::<u8>(key, v)?.into_iter().map(|b| b != 0).collect(),
            "inject_qk" => d.inject_qk = parse_list::<u8>(key, v)?.into_iter().map(|b| b != 0).collect(),
            "optimize_layers" => d.optimize_layers = parse_list::<u8>(key, v)?.into_iter().map(|b| b != 0).collect(),
            "guided_layers" => d.guided_layers = parse_list::<u8>(key, v)?.into_iter().map(|b| b != 0).collect(),
            "fresco" => self.flags = Some(FrescoFlags::parse(v)?),
            "lambda_s" => self.attn.lambda_s = parse(key, v)?,
            "lambda_t" => self.attn.lambda_t = parse(key, v)?,
            "lambda_spat" => self.optim.lambda_spat = parse(key, v)?,
            "iterations" => self.optim.iterations = parse(key, v)?,
            "learning_rate" => self.optim.learning_rate = parse(key, v)?,
            "opt_timesteps" => {
                self.opt_timesteps = match v.trim() {
                    "all" => None,
                    list => Some(parse_list(key, list)?),
                }
            }
            "flow_block" => self.flow.block = parse(key, v)?,
            "flow_radius" => self.flow.radius = parse(key, v)?,
            "s_min" => self.s_min = parse(key, v)?,
            "s_max" => self.s_max = parse(key, v)?,
            "propagation" => self.propagation = parse(key, v)?,
            "keyframes_per_step" => self.keyframes_per_step = parse(key, v)?,
            "metrics" => self.metrics = parse_bool(key, v)?,
            _ => return Err(FrescoError::contract(format!("config: unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Round-trippable `key = value` form.
    pub fn to_ini_string(&self) -> String {
        let d = &self.denoiser;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mode", self.mode.name().into());
        kv("long_base", self.long_base.name().into());
        kv("prompt", self.prompt.clone());
        kv("source_prompt", self.source_prompt.clone());
        kv("strength", self.strength.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("steps", self.steps.to_string());
        kv("beta_first", self.beta_first.to_string());
        kv("beta_last", self.beta_last.to_string());
        kv("seed", self.seed.to_string());
        kv("codec_seed", self.codec_seed.to_string());
        kv("denoiser_seed", d.seed.to_string());
        kv("layers", d.layers.to_string());
        kv("channels", d.channels.to_string());
        kv("carrier_scale", d.carrier_scale.to_string());
        kv("residual_gain", d.residual_gain.to_string());
        kv("attention_scale", d.attention_scale.to_string());
        kv("denoise_strength", d.denoise_strength.to_string());
        kv("prompt_scale", d.prompt_scale.to_string());
        kv("output_gain", d.output_gain.to_string());
        kv("inject_residual", bool_list(&d.inject_residual));
        kv("inject_qk", bool_list(&d.inject_qk));
        kv("optimize_layers", bool_list(&d.optimize_layers));
        kv("guided_layers", bool_list(&d.guided_layers));
        if let Some(f) = &self.flags {
            kv("fresco", flags_string(f));
        }
        kv("lambda_s", self.attn.lambda_s.to_string());
        kv("lambda_t", self.attn.lambda_t.to_string());
        kv("lambda_spat", self.optim.lambda_spat.to_string());
        kv("iterations", self.optim.iterations.to_string());
        kv("learning_rate", self.optim.learning_rate.to_string());
        kv(
            "opt_timesteps",
            match &self.opt_timesteps {
                None => "all".into(),
                Some(ts) => ts.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(","),
            },
        );
        kv("flow_block", self.flow.block.to_string());
        kv("flow_radius", self.flow.radius.to_string());
        kv("s_min", self.s_min.to_string());
        kv("s_max", self.s_max.to_string());
        kv("propagation", self.propagation.name().into());
        kv("keyframes_per_step", self.keyframes_per_step.to_string());
        kv("metrics", self.metrics.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let mut cfg = RunConfig {
            flags: Some(FrescoFlags::TEMPORAL),
            opt_timesteps: Some(vec![3, 5]),
            ..Default::default()
        };
        cfg.denoiser.inject_qk = vec![true, false, true];
        let back = RunConfig::from_ini_str(&cfg.to_ini_string()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_a_contract_error() {
        let e = RunConfig::from_ini_str("colour = blue\n").unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn layer_count_resizes_layer_tables() {
        let cfg = RunConfig::from_ini_str("[run]\nmode = edit\n[denoiser]\nlayers = 2\n").unwrap();
        assert_eq!(cfg.mode, Mode::Edit);
        assert_eq!(cfg.denoiser.inject_qk.len(), 2);
        assert!(!cfg.flags_for(Mode::Edit).spatial_loss);
    }
}
