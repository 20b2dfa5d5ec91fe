use crate::error::{ensure, FrescoError, Result};
use crate::media::FrameSequence;
use crate::scalar::Real;

/// Ascending 0-based keyframe indices of a clip, first and last frame
/// included.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KeyframePlan {
    pub frames: usize,
    pub keyframes: Vec<usize>,
    /// Insertions made by the midpoint fallback rather than by motion.
    pub fallback_insertions: usize,
}

impl KeyframePlan {
    pub fn max_gap(&self) -> usize {
        self.keyframes.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn is_keyframe(&self, i: usize) -> bool {
        self.keyframes.binary_search(&i).is_ok()
    }

    /// Nearest keyframes at or before / at or after `i`.
    pub fn enclosing(&self, i: usize) -> (usize, usize) {
        match self.keyframes.binary_search(&i) {
            Ok(_) => (i, i),
            Err(pos) => (self.keyframes[pos - 1], self.keyframes[pos]),
        }
    }

    /// Plain-text form: 1-based indices, one per line, after a comment
    /// header.
    pub fn to_text(&self) -> String {
        let mut s = format!("# keyframes of a {}-frame clip (1-based)\n", self.frames);
        for k in &self.keyframes {
            s.push_str(&format!("{}\n", k + 1));
        }
        s
    }
}

/// Frame distances `d_i = ‖I_i − I_{i−1}‖₂` (index 0 gets 0).
pub fn frame_distances<T: Real>(video: &FrameSequence<T>) -> Vec<f64> {
    let f = video.frames();
    (0..f.len())
        .map(|i| {
            if i == 0 {
                return 0.0;
            }
            f[i].data()
                .iter()
                .zip(f[i - 1].data())
                .map(|(a, b)| {
                    let d = (*a - *b).to_f64_lossy();
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

/// Motion-adaptive keyframe selection on a clip.
pub fn select_keyframes<T: Real>(video: &FrameSequence<T>, s_min: usize, s_max: usize) -> Result<KeyframePlan> {
    select_keyframes_from_distances(&frame_distances(video), s_min, s_max)
}

/// Keyframe selection from precomputed distances (`d[i]` for 0-based frame
/// `i`).
///
/// Starts from the two end frames. Only frames at least `s_min` away from
/// both ends compete (1-based `[s_min+1, M−s_min]`). While some gap exceeds
/// `s_max`, the frame with the largest remaining distance strictly inside an
/// oversized gap is inserted (ties go to the smaller index), and every
/// distance within `s_min` of it is cleared. When an oversized gap has no
/// positive candidate left, its midpoint is inserted instead.
pub fn select_keyframes_from_distances(d: &[f64], s_min: usize, s_max: usize) -> Result<KeyframePlan> {
    let m = d.len();
    ensure!(m >= 2, "keyframe selection needs at least 2 frames, got {m}");
    ensure!(1 <= s_min && s_min <= s_max, "need 1 ≤ s_min ≤ s_max, got s_min={s_min}, s_max={s_max}");
    ensure!(d.iter().all(|v| v.is_finite()), "frame distances must be finite");
    // 1-based eligible range [s_min+1, M−s_min] is 0-based [s_min, M−1−s_min].
    let mut score: Vec<f64> = (0..m)
        .map(|i| if i >= s_min && i + s_min < m { d[i] } else { 0.0 })
        .collect();
    let mut keys = vec![0, m - 1];
    let mut fallback = 0;
    loop {
        let oversized: Vec<(usize, usize)> = keys
            .windows(2)
            .filter(|w| w[1] - w[0] > s_max)
            .map(|w| (w[0], w[1]))
            .collect();
        let Some(&(first_a, first_b)) = oversized.first() else {
            break;
        };
        let mut best: Option<usize> = None;
        for &(a, b) in &oversized {
            for i in a + 1..b {
                if score[i] > 0.0 && best.is_none_or(|j| score[i] > score[j]) {
                    best = Some(i);
                }
            }
        }
        let pick = match best {
            Some(i) => i,
            None => {
                fallback += 1;
                (first_a + first_b) / 2
            }
        };
        let pos = keys.binary_search(&pick).err().ok_or_else(|| {
            FrescoError::contract(format!("keyframe selection picked existing keyframe {pick}"))
        })?;
        keys.insert(pos, pick);
        let lo = (pick + 1).saturating_sub(s_min);
        let hi = (pick + s_min).min(m);
        score[lo..hi].iter_mut().for_each(|v| *v = 0.0);
    }
    if fallback > 0 {
        log::warn!("keyframe selection fell back to {fallback} midpoint insertion(s)");
    }
    Ok(KeyframePlan {
        frames: m,
        keyframes: keys,
        fallback_insertions: fallback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn short_clip_keeps_the_ends() {
        let p = select_keyframes_from_distances(&[0.0, 1.0, 2.0, 3.0, 4.0], 1, 10).unwrap();
        assert_eq!(p.keyframes, vec![0, 4]);
    }

    #[test]
    fn flat_clip_uses_midpoints() {
        let p = select_keyframes_from_distances(&[0.0; 20], 2, 5).unwrap();
        assert!(p.max_gap() <= 5);
        assert!(p.fallback_insertions > 0);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(select_keyframes_from_distances(&[0.0], 1, 2).is_err());
        assert!(select_keyframes_from_distances(&[0.0; 4], 3, 2).is_err());
        assert!(select_keyframes_from_distances(&[0.0; 4], 0, 2).is_err());
    }
}
