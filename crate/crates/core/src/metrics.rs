//! Pixel-MSE after flow alignment, gram-matrix spatial distance and a
//! pooled-feature cosine for temporal coherence.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::correspondence::{warp, FlowField, OcclusionMask};
use crate::error::{ensure, Result};
use crate::media::FrameSequence;
use crate::optim::{normalize_rows, FeatureStack};
use crate::scalar::Real;
use crate::tensor::{dot, Grid};

/// Per-pair squared error between frame `i+1` and frame `i` warped onto it,
/// averaged over valid pixels and channels. `None` marks a pair without valid
/// pixels.
pub fn pixel_mse_pairs<T: Real>(
    frames: &[Grid<T>],
    flows: &[FlowField<T>],
    masks: &[OcclusionMask],
) -> Result<Vec<Option<f64>>> {
    ensure!(
        flows.len() + 1 == frames.len() && masks.len() == flows.len(),
        "{} frames need {} consecutive flows and masks, got {} and {}",
        frames.len(),
        frames.len().saturating_sub(1),
        flows.len(),
        masks.len()
    );
    (0..flows.len())
        .into_par_iter()
        .map(|i| {
            let next = &frames[i + 1];
            let m = &masks[i];
            ensure!(
                m.height() == next.height() && m.width() == next.width(),
                "mask {i} does not match the frame grid"
            );
            let warped = warp(&frames[i], &flows[i], T::zero())?;
            let c = next.channels();
            let mut sum = 0.0;
            let mut count = 0usize;
            for idx in 0..next.cells() {
                if !m.is_valid_at(idx) {
                    continue;
                }
                for (a, b) in next.cell(idx).iter().zip(warped.cell(idx)) {
                    let d = (*a - *b).to_f64_lossy();
                    sum += d * d;
                }
                count += c;
            }
            Ok((count > 0).then(|| sum / count as f64))
        })
        .collect()
}

/// Mean of [`pixel_mse_pairs`] over pairs with valid pixels; pairs without
/// any are skipped with a warning. Zero when every pair is skipped.
pub fn pixel_mse<T: Real>(frames: &FrameSequence<T>, flows: &[FlowField<T>], masks: &[OcclusionMask]) -> Result<f64> {
    Ok(mean_present(&pixel_mse_pairs(frames.frames(), flows, masks)?))
}

fn mean_present(values: &[Option<f64>]) -> f64 {
    let kept: Vec<f64> = values.iter().flatten().copied().collect();
    let skipped = values.len() - kept.len();
    if skipped > 0 {
        log::warn!("pixel-MSE skipped {skipped} pair(s) without valid pixels");
    }
    if kept.is_empty() {
        0.0
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    }
}

/// L1 distance between the cosine gram matrices of each frame pair.
pub fn spat_con_frames<T: Real>(output: &FeatureStack<T>, reference: &FeatureStack<T>) -> Result<Vec<f64>> {
    ensure!(
        output.shape() == reference.shape(),
        "feature shapes differ: {:?} vs {:?}",
        output.shape(),
        reference.shape()
    );
    Ok(output
        .frames()
        .par_iter()
        .zip(reference.frames().par_iter())
        .map(|(a, b)| {
            let (na, _) = normalize_rows(&a.to_matrix());
            let (nb, _) = normalize_rows(&b.to_matrix());
            let mut s = 0.0;
            for p in 0..na.rows() {
                for q in 0..na.rows() {
                    s += (dot(na.row(p), na.row(q)) - dot(nb.row(p), nb.row(q))).to_f64_lossy().abs();
                }
            }
            s
        })
        .collect())
}

/// Mean over frames of [`spat_con_frames`].
pub fn spat_con<T: Real>(output: &FeatureStack<T>, reference: &FeatureStack<T>) -> Result<f64> {
    let per = spat_con_frames(output, reference)?;
    Ok(if per.is_empty() { 0.0 } else { per.iter().sum::<f64>() / per.len() as f64 })
}

/// Cosine between the mean-pooled feature vectors of consecutive frames. A
/// zero pooled vector makes its pairs contribute 0.
pub fn temp_con_pairs<T: Real>(features: &FeatureStack<T>) -> Result<Vec<f64>> {
    ensure!(features.len() >= 2, "temporal coherence needs at least two frames");
    let pooled: Vec<Vec<f64>> = features
        .frames()
        .iter()
        .map(|g| {
            let mut acc = vec![0.0; g.channels()];
            for idx in 0..g.cells() {
                for (a, v) in acc.iter_mut().zip(g.cell(idx)) {
                    *a += v.to_f64_lossy();
                }
            }
            let n = g.cells().max(1) as f64;
            acc.iter_mut().for_each(|a| *a /= n);
            acc
        })
        .collect();
    Ok(pooled
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let na = dot(&w[0], &w[0]).sqrt();
            let nb = dot(&w[1], &w[1]).sqrt();
            if na == 0.0 || nb == 0.0 {
                log::warn!("temporal coherence: zero pooled feature in pair {i}");
                0.0
            } else {
                dot(&w[0], &w[1]) / (na * nb)
            }
        })
        .collect())
}

/// Mean of [`temp_con_pairs`].
pub fn temp_con<T: Real>(features: &FeatureStack<T>) -> Result<f64> {
    let per = temp_con_pairs(features)?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Frames average-pooled over `cell × cell` blocks, one token per block with
/// the pixel channels as features.
pub fn frame_features<T: Real>(frames: &FrameSequence<T>, cell: usize) -> Result<FeatureStack<T>> {
    ensure!(cell >= 1, "pooling cell must be at least 1");
    ensure!(
        frames.height() % cell == 0 && frames.width() % cell == 0,
        "{}x{} frames do not tile into {cell}x{cell} cells",
        frames.width(),
        frames.height()
    );
    let inv = T::one() / T::from_usize_lossy(cell * cell);
    FeatureStack::new(
        frames
            .frames()
            .iter()
            .map(|f| {
                Grid::from_fn(f.height() / cell, f.width() / cell, f.channels(), |y, x, c| {
                    let mut s = T::zero();
                    for dy in 0..cell {
                        for dx in 0..cell {
                            s += f.get(y * cell + dy, x * cell + dx, c);
                        }
                    }
                    s * inv
                })
            })
            .collect(),
    )
}

/// All three metrics with their per-pair / per-frame breakdowns.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub pixel_mse: f64,
    pub pixel_mse_pairs: Vec<Option<f64>>,
    pub spat_con: f64,
    pub spat_con_frames: Vec<f64>,
    pub temp_con: f64,
    pub temp_con_pairs: Vec<f64>,
}

/// Pooling cell used by [`evaluate`] for the feature metrics.
pub const FEATURE_CELL: usize = 4;

/// Score `output` against the `reference` clip it was produced from.
/// Alignment uses the supplied flows and masks.
pub fn evaluate<T: Real>(
    output: &FrameSequence<T>,
    reference: &FrameSequence<T>,
    flows: &[FlowField<T>],
    masks: &[OcclusionMask],
) -> Result<MetricReport> {
    ensure!(
        output.len() == reference.len(),
        "output has {} frames, reference {}",
        output.len(),
        reference.len()
    );
    let pairs = pixel_mse_pairs(output.frames(), flows, masks)?;
    let out_f = frame_features(output, FEATURE_CELL)?;
    let ref_f = frame_features(reference, FEATURE_CELL)?;
    let spat = spat_con_frames(&out_f, &ref_f)?;
    let temp = if output.len() >= 2 { temp_con_pairs(&out_f)? } else { Vec::new() };
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let report = MetricReport {
        pixel_mse: mean_present(&pairs),
        pixel_mse_pairs: pairs,
        spat_con: mean(&spat),
        spat_con_frames: spat,
        temp_con: if temp.is_empty() { 1.0 } else { mean(&temp) },
        temp_con_pairs: temp,
    };
    ensure!(report.is_finite(), "metric values are not finite");
    Ok(report)
}

impl MetricReport {
    pub fn is_finite(&self) -> bool {
        self.pixel_mse.is_finite()
            && self.spat_con.is_finite()
            && self.temp_con.is_finite()
            && self.pixel_mse_pairs.iter().flatten().all(|v| v.is_finite())
            && self.spat_con_frames.iter().all(|v| v.is_finite())
            && self.temp_con_pairs.iter().all(|v| v.is_finite())
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pixel-MSE  {:.6e}", self.pixel_mse);
        let _ = writeln!(s, "spat-con   {:.6e}", self.spat_con);
        let _ = writeln!(s, "temp-con   {:.6}", self.temp_con);
        let _ = writeln!(s, "\npair  pixel-MSE     temp-con");
        for (i, p) in self.pixel_mse_pairs.iter().enumerate() {
            let mse = p.map_or_else(|| "skipped".to_string(), |v| format!("{v:.6e}"));
            let tc = self.temp_con_pairs.get(i).map_or_else(String::new, |v| format!("{v:.6}"));
            let _ = writeln!(s, "{:>4}  {mse:<12}  {tc}", format!("{}-{}", i, i + 1));
        }
        let _ = writeln!(s, "\nframe  spat-con");
        for (i, v) in self.spat_con_frames.iter().enumerate() {
            let _ = writeln!(s, "{i:>5}  {v:.6e}");
        }
        s
    }

    /// One `key=value` per line, full precision.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "pixel_mse={}", self.pixel_mse);
        let _ = writeln!(s, "spat_con={}", self.spat_con);
        let _ = writeln!(s, "temp_con={}", self.temp_con);
        for (i, p) in self.pixel_mse_pairs.iter().enumerate() {
            let v = p.map_or_else(|| "skipped".to_string(), |v| v.to_string());
            let _ = writeln!(s, "pixel_mse.{i}={v}");
        }
        for (i, v) in self.spat_con_frames.iter().enumerate() {
            let _ = writeln!(s, "spat_con.{i}={v}");
        }
        for (i, v) in self.temp_con_pairs.iter().enumerate() {
            let _ = writeln!(s, "temp_con.{i}={v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(vals: &[&[f64]], h: usize, w: usize, d: usize) -> FeatureStack<f64> {
        FeatureStack::new(vals.iter().map(|v| Grid::from_vec(h, w, d, v.to_vec()).unwrap()).collect()).unwrap()
    }

    #[test]
    fn two_token_gram_distance() {
        let a = stack(&[&[1.0, 0.0, 0.0, 1.0]], 1, 2, 2);
        let b = stack(&[&[1.0, 0.0, 1.0, 0.0]], 1, 2, 2);
        assert_eq!(spat_con(&a, &b).unwrap(), 2.0);
        assert_eq!(spat_con(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_pooled_features_have_zero_cosine() {
        let f = stack(&[&[1.0, 0.0], &[0.0, 2.0]], 1, 1, 2);
        assert_eq!(temp_con(&f).unwrap(), 0.0);
        let same = stack(&[&[1.0, 2.0], &[1.0, 2.0]], 1, 1, 2);
        assert!((temp_con(&same).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn all_invalid_masks_skip_every_pair() {
        let frames = vec![Grid::<f64>::filled(2, 2, 3, 0.5), Grid::filled(2, 2, 3, 0.1)];
        let flows = vec![FlowField::zeros(0, 1, 2, 2)];
        let masks = vec![OcclusionMask::all_invalid(0, 1, 2, 2)];
        assert_eq!(pixel_mse_pairs(&frames, &flows, &masks).unwrap(), vec![None]);
    }
}
