use rayon::prelude::*;

use super::KeyframePlan;
use crate::correspondence::{warp, ClipCorrespondence};
use crate::error::{ensure, Result};
use crate::media::FrameSequence;
use crate::scalar::Real;
use crate::tensor::Grid;

/// Per-channel mean and standard deviation.
fn channel_stats<T: Real>(g: &Grid<T>) -> Vec<(T, T)> {
    let n = T::from_usize_lossy(g.cells().max(1));
    (0..g.channels())
        .map(|c| {
            let mean = (0..g.cells()).fold(T::zero(), |a, i| a + g.cell(i)[c]) / n;
            let var = (0..g.cells()).fold(T::zero(), |a, i| {
                let d = g.cell(i)[c] - mean;
                a + d * d
            }) / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// `src` with each channel's mean and spread moved to those of `target`.
pub fn match_color<T: Real>(src: &Grid<T>, target: &Grid<T>) -> Grid<T> {
    let (s, t) = (channel_stats(src), channel_stats(target));
    let eps = T::lit(1e-8);
    let mut out = src.clone();
    for i in 0..out.cells() {
        for (c, v) in out.cell_mut(i).iter_mut().enumerate() {
            let (sm, ss) = s[c];
            let (tm, ts) = t[c];
            *v = if ss > eps { (*v - sm) * (ts / ss) + tm } else { *v - sm + tm };
        }
    }
    out
}

/// Fill non-keyframes from the edited keyframes around them.
///
/// Each edited neighbour is warped to the frame through the chained
/// consecutive flows and weighted by the inverse frame distance; a side's
/// weight drops to zero wherever its chain crosses an invalid mask. Pixels
/// that neither side reaches take the unedited source pixel, recoloured to
/// the global colour statistics of the nearer edited keyframe. Keyframes are
/// copied.
pub fn interpolate_nonkeyframes<T: Real>(
    video: &FrameSequence<T>,
    edited: &[Grid<T>],
    plan: &KeyframePlan,
    corr: &ClipCorrespondence<T>,
) -> Result<FrameSequence<T>> {
    let m = video.len();
    ensure!(plan.frames == m, "plan covers {} frames, clip has {m}", plan.frames);
    ensure!(edited.len() == plan.keyframes.len(), "one edited frame per keyframe required");
    corr.check(m, video.height(), video.width())?;
    for e in edited {
        ensure!(e.same_shape(video.frame(0)), "edited keyframes must match the clip's frame shape");
    }
    let slot = |k: usize| plan.keyframes.binary_search(&k).expect("keyframe present");
    let frames: Vec<Grid<T>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let (a, b) = plan.enclosing(i);
            if a == i {
                return Ok(edited[slot(i)].clone());
            }
            let (h, w, c) = video.frame(i).dims();
            let mut acc = Grid::zeros(h, w, c);
            let mut wsum = vec![T::zero(); h * w];
            for k in [a, b] {
                let (flow, mask) = corr.between(k, i)?;
                let warped = warp(&edited[slot(k)], &flow, T::zero())?;
                let wk = T::one() / T::from_usize_lossy(k.abs_diff(i));
                for idx in 0..h * w {
                    if !mask.is_valid_at(idx) {
                        continue;
                    }
                    wsum[idx] += wk;
                    for (o, &v) in acc.cell_mut(idx).iter_mut().zip(warped.cell(idx)) {
                        *o += wk * v;
                    }
                }
            }
            let nearer = if i - a <= b - i { a } else { b };
            let fallback = if wsum.iter().any(|&s| s == T::zero()) {
                Some(match_color(video.frame(i), &edited[slot(nearer)]))
            } else {
                None
            };
            for idx in 0..h * w {
                let s = wsum[idx];
                if s > T::zero() {
                    acc.cell_mut(idx).iter_mut().for_each(|v| *v = *v / s);
                } else if let Some(f) = &fallback {
                    acc.cell_mut(idx).copy_from_slice(f.cell(idx));
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    FrameSequence::from_clamped(frames, video.frame_rate())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recolour_moves_mean_and_spread() {
        let src = Grid::from_vec(1, 2, 1, vec![0.0, 2.0]).unwrap();
        let tgt = Grid::from_vec(1, 2, 1, vec![0.4, 0.6]).unwrap();
        let out = match_color(&src, &tgt);
        assert!((out.get(0, 0, 0) - 0.4f64).abs() < 1e-12);
        assert!((out.get(0, 1, 0) - 0.6f64).abs() < 1e-12);
    }
}
