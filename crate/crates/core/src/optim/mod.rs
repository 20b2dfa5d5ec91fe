//! Consistency-aware feature optimization.
//!
//! Decoder features `f = {f_i}` are refined by minimising
//! `L_temp(f) + L_spat(f)` with Adam, where
//!
//! ```text
//! L_temp(f) = Σ_i ‖ M_i^{i+1} ⊙ (f_{i+1} − warp_i^{i+1}(f_i)) ‖₁
//! L_spat(f) = λ_spat Σ_i ‖ f̃_i f̃_iᵀ − f̃ʳ_i f̃ʳ_iᵀ ‖²_F
//! ```
//!
//! and `f̃` has every token vector scaled to unit length.

mod adam;
mod loss;

pub use adam::Adam;
pub(crate) use loss::normalize_rows;
pub use loss::{
    count_zero_norm_tokens, loss_gradients, spatial_loss, spatial_loss_gradient, temporal_loss,
    temporal_loss_gradient, total_loss,
};

use crate::correspondence::{FlowField, OcclusionMask};
use crate::error::{ensure, Result};
use crate::scalar::Real;
use crate::tensor::Grid;

/// Per-frame token grids of identical shape `h × w × d`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack<T> {
    frames: Vec<Grid<T>>,
}

impl<T: Real> FeatureStack<T> {
    pub fn new(frames: Vec<Grid<T>>) -> Result<Self> {
        if let Some(first) = frames.first() {
            ensure!(
                frames.iter().all(|f| f.same_shape(first)),
                "feature frames differ in shape"
            );
        }
        Ok(Self { frames })
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            frames: other
                .frames
                .iter()
                .map(|f| Grid::zeros(f.height(), f.width(), f.channels()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(frames, height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        match self.frames.first() {
            Some(f) => (self.frames.len(), f.height(), f.width(), f.channels()),
            None => (0, 0, 0, 0),
        }
    }

    pub fn frames(&self) -> &[Grid<T>] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Grid<T>] {
        &mut self.frames
    }

    pub fn frame(&self, i: usize) -> &Grid<T> {
        &self.frames[i]
    }

    pub fn into_frames(self) -> Vec<Grid<T>> {
        self.frames
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.frames
            .iter()
            .zip(&other.frames)
            .fold(T::zero(), |m, (a, b)| m.max(a.max_abs_diff(b)))
    }

    fn flat_len(&self) -> usize {
        self.frames.iter().map(|f| f.data().len()).sum()
    }
}

/// Adam settings and the spatial-loss weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimConfig {
    pub lambda_spat: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lambda_spat: 50.0,
            iterations: 20,
            learning_rate: 0.4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.learning_rate > 0.0, "learning rate must be positive");
        ensure!(self.lambda_spat >= 0.0, "lambda_spat must be non-negative");
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2),
            "Adam betas must lie in [0, 1)"
        );
        ensure!(self.eps > 0.0, "Adam epsilon must be positive");
        Ok(())
    }
}

/// What the losses are measured against. An empty flow list disables the
/// temporal term; a missing reference disables the spatial term.
#[derive(Clone, Copy, Debug)]
pub struct ConsistencyTargets<'a, T> {
    pub flows: &'a [FlowField<T>],
    pub masks: &'a [OcclusionMask],
    pub reference: Option<&'a FeatureStack<T>>,
}

impl<'a, T> ConsistencyTargets<'a, T> {
    pub fn new(flows: &'a [FlowField<T>], masks: &'a [OcclusionMask], reference: Option<&'a FeatureStack<T>>) -> Self {
        Self {
            flows,
            masks,
            reference,
        }
    }
}

/// Run `cfg.iterations` Adam steps on `L_temp + L_spat` starting from `f` and
/// return the last iterate.
pub fn optimize_features<T: Real>(
    f: &FeatureStack<T>,
    targets: ConsistencyTargets<'_, T>,
    cfg: &OptimConfig,
) -> Result<FeatureStack<T>> {
    cfg.validate()?;
    let mut x = f.clone();
    if cfg.iterations == 0 {
        return Ok(x);
    }
    let mut adam = Adam::new(x.flat_len(), cfg);
    let mut flat_grad = Vec::with_capacity(x.flat_len());
    for _ in 0..cfg.iterations {
        let g = loss_gradients(&x, targets, T::lit(cfg.lambda_spat))?;
        flat_grad.clear();
        for fr in g.frames() {
            flat_grad.extend_from_slice(fr.data());
        }
        let mut offset = 0;
        adam.begin_step();
        for fr in x.frames_mut() {
            let n = fr.data().len();
            adam.update(offset, fr.data_mut(), &flat_grad[offset..offset + n]);
            offset += n;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(vals: &[&[f64]], h: usize, w: usize, d: usize) -> FeatureStack<f64> {
        FeatureStack::new(vals.iter().map(|v| Grid::from_vec(h, w, d, v.to_vec()).unwrap()).collect()).unwrap()
    }

    #[test]
    fn zero_iterations_returns_input() {
        let f = stack(&[&[1.0, 2.0], &[3.0, 5.0]], 1, 2, 1);
        let flows = vec![FlowField::zeros(0, 1, 1, 2)];
        let masks = vec![OcclusionMask::all_valid(0, 1, 1, 2)];
        let cfg = OptimConfig {
            iterations: 0,
            ..Default::default()
        };
        let out = optimize_features(&f, ConsistencyTargets::new(&flows, &masks, Some(&f)), &cfg).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn fixed_point_is_preserved_exactly() {
        let a = [0.3, -1.0, 2.0, 0.5, 1.5, 0.2, -0.7, 0.9];
        let f = stack(&[&a, &a], 2, 2, 2);
        let flows = vec![FlowField::zeros(0, 1, 2, 2)];
        let masks = vec![OcclusionMask::all_valid(0, 1, 2, 2)];
        let out =
            optimize_features(&f, ConsistencyTargets::new(&flows, &masks, Some(&f)), &OptimConfig::default()).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let f = stack(&[&[1.0]], 1, 1, 1);
        let cfg = OptimConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        assert!(optimize_features(&f, ConsistencyTargets::new(&[], &[], None), &cfg).is_err());
    }
}
