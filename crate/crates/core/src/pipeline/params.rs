use rayon::prelude::*;

use crate::attention::{AttnConfig, GuidedStages};
use crate::correspondence::{
    downscale_to_tokens, occlusion_mask, ClipCorrespondence, AttentionIndex, FlowConfig, FlowField, OcclusionMask, TokenLayout,
};
use crate::diffusion::LayerCapture;
use crate::error::{ensure, FrescoError, Result};
use crate::optim::{FeatureStack, OptimConfig};
use crate::scalar::Real;
use crate::tensor::{Grid, Matrix};

/// Independent switches for the five FRESCO adaptations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrescoFlags {
    pub temporal_loss: bool,
    pub spatial_loss: bool,
    pub spatial_attn: bool,
    pub cross_frame: bool,
    pub temporal_attn: bool,
}

impl FrescoFlags {
    pub const ALL: Self = Self {
        temporal_loss: true,
        spatial_loss: true,
        spatial_attn: true,
        cross_frame: true,
        temporal_attn: true,
    };
    pub const NONE: Self = Self {
        temporal_loss: false,
        spatial_loss: false,
        spatial_attn: false,
        cross_frame: false,
        temporal_attn: false,
    };
    /// Temporal loss, cross-frame and temporal-guided attention.
    pub const TEMPORAL: Self = Self {
        temporal_loss: true,
        cross_frame: true,
        temporal_attn: true,
        ..Self::NONE
    };
    /// Spatial loss and spatial-guided attention.
    pub const SPATIAL: Self = Self {
        spatial_loss: true,
        spatial_attn: true,
        ..Self::NONE
    };
    /// The three attentions without feature optimization.
    pub const ATTENTION: Self = Self {
        spatial_attn: true,
        cross_frame: true,
        temporal_attn: true,
        ..Self::NONE
    };
    /// Both losses without attention changes.
    pub const OPTIMIZATION: Self = Self {
        temporal_loss: true,
        spatial_loss: true,
        ..Self::NONE
    };

    pub fn any(&self) -> bool {
        self.optimizes() || self.stages().any()
    }

    pub fn optimizes(&self) -> bool {
        self.temporal_loss || self.spatial_loss
    }

    pub fn stages(&self) -> GuidedStages {
        GuidedStages {
            spatial: self.spatial_attn,
            cross_frame: self.cross_frame,
            temporal: self.temporal_attn,
        }
    }

    /// Parse a comma-separated list of `temporal_loss`, `spatial_loss`,
    /// `spatial_attn`, `cross_frame`, `temporal_attn`, or one of the presets
    /// `all`, `none`, `temporal`, `spatial`, `attention`, `optimization`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut out = Self::NONE;
        for word in s.split(',').map(str::trim).filter(|w| !w.is_empty()) {
            let add = match word {
                "all" => Self::ALL,
                "none" => Self::NONE,
                "temporal" => Self::TEMPORAL,
                "spatial" => Self::SPATIAL,
                "attention" => Self::ATTENTION,
                "optimization" => Self::OPTIMIZATION,
                "temporal_loss" => Self { temporal_loss: true, ..Self::NONE },
                "spatial_loss" => Self { spatial_loss: true, ..Self::NONE },
                "spatial_attn" => Self { spatial_attn: true, ..Self::NONE },
                "cross_frame" => Self { cross_frame: true, ..Self::NONE },
                "temporal_attn" => Self { temporal_attn: true, ..Self::NONE },
                other => return Err(FrescoError::contract(format!("unknown FRESCO flag `{other}`"))),
            };
            out = Self {
                temporal_loss: out.temporal_loss || add.temporal_loss,
                spatial_loss: out.spatial_loss || add.spatial_loss,
                spatial_attn: out.spatial_attn || add.spatial_attn,
                cross_frame: out.cross_frame || add.cross_frame,
                temporal_attn: out.temporal_attn || add.temporal_attn,
            };
        }
        Ok(out)
    }
}

/// Everything FRESCO needs for one batch, on the token grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FrescoParams<T> {
    pub layout: TokenLayout,
    pub flows: Vec<FlowField<T>>,
    pub masks: Vec<OcclusionMask>,
    pub index: AttentionIndex,
    /// Single-step reference capture (`f^r`, `Q^r`, `K^r` per layer).
    pub reference: Option<LayerCapture<T>>,
    pub attn: AttnConfig,
    pub optim: OptimConfig,
    pub flags: FrescoFlags,
    /// Timesteps at which feature optimization runs; `None` means all.
    pub opt_timesteps: Option<Vec<usize>>,
}

impl<T: Real> FrescoParams<T> {
    pub fn stages(&self) -> GuidedStages {
        self.flags.stages()
    }

    pub fn optimizes_at(&self, t: usize) -> bool {
        self.flags.optimizes() && self.opt_timesteps.as_ref().is_none_or(|ts| ts.contains(&t))
    }

    pub fn reference_features(&self, layer: usize) -> Result<&FeatureStack<T>> {
        self.reference
            .as_ref()
            .and_then(|r| r.features.get(layer))
            .ok_or_else(|| FrescoError::contract(format!("no reference features for layer {layer}")))
    }

    /// `Q^r`, `K^r` of a layer: the injected per-step vectors in editing
    /// mode, otherwise the single-step reference capture.
    pub fn reference_qk<'a>(
        &'a self,
        layer: usize,
        injection: Option<&'a LayerCapture<T>>,
    ) -> Result<(&'a [Matrix<T>], &'a [Matrix<T>])> {
        let src = match (self.attn.editing_mode, injection) {
            (true, Some(rec)) => Some(rec),
            _ => self.reference.as_ref(),
        };
        let rec = src.ok_or_else(|| FrescoError::contract("FRESCO-guided attention needs reference Q and K"))?;
        ensure!(layer < rec.q.len(), "no reference Q/K for layer {layer}");
        Ok((&rec.q[layer], &rec.k[layer]))
    }
}

/// Knobs of [`build_fresco_params`] that do not come from the frames.
#[derive(Clone, Debug, PartialEq)]
pub struct FrescoSettings {
    pub flags: FrescoFlags,
    pub attn: AttnConfig,
    pub optim: OptimConfig,
    pub opt_timesteps: Option<Vec<usize>>,
}

impl Default for FrescoSettings {
    fn default() -> Self {
        Self {
            flags: FrescoFlags::ALL,
            attn: AttnConfig::default(),
            optim: OptimConfig::default(),
            opt_timesteps: None,
        }
    }
}

/// Block-matching flows in both directions for every consecutive pair, with
/// forward-backward occlusion masks.
pub fn estimate_correspondence<T: Real>(frames: &[Grid<T>], cfg: FlowConfig) -> Result<ClipCorrespondence<T>> {
    let pairs: Vec<_> = (0..frames.len().saturating_sub(1))
        .into_par_iter()
        .map(|i| {
            let fwd = FlowField::estimate(i, i + 1, &frames[i], &frames[i + 1], cfg)?;
            let bwd = FlowField::estimate(i + 1, i, &frames[i + 1], &frames[i], cfg)?;
            let fm = occlusion_mask(&fwd, &bwd)?;
            let bm = occlusion_mask(&bwd, &fwd)?;
            Ok((fwd, fm, bwd, bm))
        })
        .collect::<Result<_>>()?;
    let mut out = ClipCorrespondence {
        forward: Vec::new(),
        forward_masks: Vec::new(),
        backward: Vec::new(),
        backward_masks: Vec::new(),
    };
    for (f, fm, b, bm) in pairs {
        out.forward.push(f);
        out.forward_masks.push(fm);
        out.backward.push(b);
        out.backward_masks.push(bm);
    }
    Ok(out)
}

/// Assemble FRESCO parameters from pixel-level consecutive flows and masks:
/// downscale them to the token grid, build `p_u` and `p_f`, and attach the
/// reference capture.
pub fn build_fresco_params<T: Real>(
    pixel_flows: &[FlowField<T>],
    pixel_masks: &[OcclusionMask],
    layout: TokenLayout,
    reference: Option<LayerCapture<T>>,
    settings: &FrescoSettings,
) -> Result<FrescoParams<T>> {
    settings.attn.validate()?;
    settings.optim.validate()?;
    ensure!(layout.frames >= 1, "FRESCO parameters need at least one frame");
    ensure!(
        pixel_flows.len() + 1 == layout.frames && pixel_masks.len() == pixel_flows.len(),
        "{} frames need {} consecutive flows and masks, got {} and {}",
        layout.frames,
        layout.frames - 1,
        pixel_flows.len(),
        pixel_masks.len()
    );
    let mut flows = Vec::with_capacity(pixel_flows.len());
    let mut masks = Vec::with_capacity(pixel_masks.len());
    for (i, (f, m)) in pixel_flows.iter().zip(pixel_masks).enumerate() {
        ensure!(
            f.height() % layout.height == 0 && f.height() / layout.height == f.width() / layout.width,
            "pixel flow {}x{} is not an integer multiple of the {}x{} token grid",
            f.width(),
            f.height(),
            layout.width,
            layout.height
        );
        let factor = f.height() / layout.height;
        let (tf, tm) = downscale_to_tokens(f, m, factor)?;
        flows.push(tf.relabel(i, i + 1));
        masks.push(tm.relabel(i, i + 1));
    }
    if let Some(r) = &reference {
        ensure!(
            r.features
                .iter()
                .all(|fs| fs.len() == layout.frames && fs.shape().1 == layout.height && fs.shape().2 == layout.width),
            "reference capture does not match the token layout"
        );
    }
    let index = AttentionIndex::build(layout, &flows, &masks)?;
    Ok(FrescoParams {
        layout,
        flows,
        masks,
        index,
        reference,
        attn: settings.attn,
        optim: settings.optim,
        flags: settings.flags,
        opt_timesteps: settings.opt_timesteps.clone(),
    })
}
