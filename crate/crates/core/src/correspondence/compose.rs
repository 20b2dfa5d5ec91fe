use super::{FlowField, OcclusionMask};
use crate::error::{ensure, Result};
use crate::scalar::Real;
use crate::tensor::bilinear_taps;

/// Flows and masks between consecutive frames of a clip, in both time
/// directions. `forward[k]` maps `k → k+1` (on frame `k+1`'s grid),
/// `backward[k]` maps `k+1 → k` (on frame `k`'s grid).
#[derive(Clone, Debug, PartialEq)]
pub struct ClipCorrespondence<T> {
    pub forward: Vec<FlowField<T>>,
    pub forward_masks: Vec<OcclusionMask>,
    pub backward: Vec<FlowField<T>>,
    pub backward_masks: Vec<OcclusionMask>,
}

impl<T: Real> ClipCorrespondence<T> {
    pub fn pairs(&self) -> usize {
        self.forward.len()
    }

    /// Counts and grids agree for a clip of `frames` frames of `h × w`.
    pub fn check(&self, frames: usize, h: usize, w: usize) -> Result<()> {
        let n = frames.saturating_sub(1);
        ensure!(
            self.forward.len() == n
                && self.forward_masks.len() == n
                && self.backward.len() == n
                && self.backward_masks.len() == n,
            "{frames} frames need {n} flows and masks in each direction"
        );
        let flows = self.forward.iter().chain(&self.backward);
        let masks = self.forward_masks.iter().chain(&self.backward_masks);
        for (f, m) in flows.zip(masks) {
            ensure!(
                f.height() == h && f.width() == w && m.height() == h && m.width() == w,
                "correspondence grid does not match the {w}x{h} frames"
            );
        }
        Ok(())
    }

    /// Backward flow `a → b` on frame `b`'s grid with its validity, chained
    /// through every frame in between. Adjacent pairs are returned as stored.
    pub fn between(&self, a: usize, b: usize) -> Result<(FlowField<T>, OcclusionMask)> {
        ensure!(
            a.max(b) <= self.pairs(),
            "no correspondence reaches frame {}",
            a.max(b)
        );
        if b == a + 1 {
            return Ok((self.forward[a].clone(), self.forward_masks[a].clone()));
        }
        if a == b + 1 {
            return Ok((self.backward[b].clone(), self.backward_masks[b].clone()));
        }
        // Steps in the order a point on b's grid is traced back.
        let steps: Vec<(&FlowField<T>, &OcclusionMask)> = if a <= b {
            (a..b).rev().map(|k| (&self.forward[k], &self.forward_masks[k])).collect()
        } else {
            (b..a).map(|k| (&self.backward[k], &self.backward_masks[k])).collect()
        };
        let first = self.forward.first().ok_or_else(|| crate::FrescoError::contract("no consecutive flows"))?;
        compose_chain(&steps, a, b, first.height(), first.width())
    }
}

/// Chain consecutive forward flows `a → a+1 → … → b` into one backward flow
/// `a → b`; see [`compose_chain`].
pub fn compose_flows<T: Real>(
    flows: &[FlowField<T>],
    masks: &[OcclusionMask],
    a: usize,
    b: usize,
) -> Result<(FlowField<T>, OcclusionMask)> {
    ensure!(a <= b, "forward chains run forwards in time, got {a} -> {b}");
    ensure!(flows.len() == masks.len(), "flows and masks differ in count");
    ensure!(b <= flows.len(), "no consecutive flows reach frame {b}");
    ensure!(!flows.is_empty(), "no consecutive flows to chain");
    let steps: Vec<_> = (a..b).rev().map(|k| (&flows[k], &masks[k])).collect();
    compose_chain(&steps, a, b, flows[0].height(), flows[0].width())
}

/// Trace every pixel of the target grid back through `steps` (first step
/// applies on the target grid). A pixel stays valid while every bilinear tap
/// of the masks it passes through is valid and the trace stays on the grid;
/// invalid pixels keep the displacement accumulated so far. No steps gives
/// the identity.
pub fn compose_chain<T: Real>(
    steps: &[(&FlowField<T>, &OcclusionMask)],
    source: usize,
    target: usize,
    h: usize,
    w: usize,
) -> Result<(FlowField<T>, OcclusionMask)> {
    for (f, m) in steps {
        ensure!(
            f.height() == h && f.width() == w && m.height() == h && m.width() == w,
            "chained flows and masks must share one grid"
        );
    }
    let mut vectors = FlowField::zeros(source, target, h, w).into_vectors();
    let mut valid = vec![true; h * w];
    for y in 0..h {
        for x in 0..w {
            let (mut px, mut py) = (T::from_usize_lossy(x), T::from_usize_lossy(y));
            let mut ok = true;
            for (flow, mask) in steps {
                let Some(taps) = bilinear_taps(px, py, w, h) else {
                    ok = false;
                    break;
                };
                if taps.iter().any(|&(i, wt)| wt > T::zero() && !mask.is_valid_at(i)) {
                    ok = false;
                    break;
                }
                let mut v = [T::zero(); 2];
                flow.vectors().sample_bilinear(px, py, &mut v);
                px += v[0];
                py += v[1];
            }
            valid[y * w + x] = ok && bilinear_taps(px, py, w, h).is_some();
            vectors.set(y, x, 0, px - T::from_usize_lossy(x));
            vectors.set(y, x, 1, py - T::from_usize_lossy(y));
        }
    }
    Ok((FlowField::new(source, target, vectors)?, OcclusionMask::new(source, target, h, w, valid)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shifting(n: usize, dx: f64) -> ClipCorrespondence<f64> {
        ClipCorrespondence {
            forward: (0..n).map(|i| FlowField::uniform(i, i + 1, 6, 6, -dx, 0.0)).collect(),
            forward_masks: (0..n).map(|i| OcclusionMask::all_valid(i, i + 1, 6, 6)).collect(),
            backward: (0..n).map(|i| FlowField::uniform(i + 1, i, 6, 6, dx, 0.0)).collect(),
            backward_masks: (0..n).map(|i| OcclusionMask::all_valid(i + 1, i, 6, 6)).collect(),
        }
    }

    #[test]
    fn uniform_translations_add_up() {
        let c = shifting(3, 1.0);
        let (f, m) = compose_flows(&c.forward, &c.forward_masks, 0, 3).unwrap();
        assert_eq!(f.at(2, 4), (-3.0, 0.0));
        assert!(m.is_valid(2, 4));
        assert!(!m.is_valid(2, 2));
        let (b, bm) = c.between(3, 0).unwrap();
        assert_eq!(b.at(2, 1), (3.0, 0.0));
        assert!(!bm.is_valid(2, 3));
        let (id, mid) = c.between(2, 2).unwrap();
        assert_eq!(id.at(1, 1), (0.0, 0.0));
        assert_eq!(mid.valid_count(), 36);
    }
}
