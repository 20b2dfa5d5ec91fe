use crate::error::{ensure, Result};

/// Per-timestep keyframe sets inside one window of `frames` frames.
///
/// `n_key` slots start evenly spread (`⌊j·L/n⌋`) over the cycled frames and
/// all move forward by one frame per timestep, wrapping around. Without
/// anchors the cycled frames are the whole window. With anchors the first
/// and last frame are always keyframes and the slots cycle over the interior
/// only.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CyclicSchedule {
    pub frames: usize,
    pub n_key: usize,
    pub anchors: bool,
    base: Vec<usize>,
    cycle: usize,
}

pub fn cyclic_schedule(frames: usize, n_key: usize, anchors: bool) -> Result<CyclicSchedule> {
    ensure!(n_key <= frames, "{n_key} keyframes do not fit a window of {frames}");
    let span = if anchors {
        ensure!(frames >= 3, "an anchored window needs at least 3 frames, got {frames}");
        ensure!(
            (1..=frames - 2).contains(&n_key),
            "an anchored window of {frames} cycles 1..={} interior keyframes, got {n_key}",
            frames - 2
        );
        frames - 2
    } else {
        ensure!(n_key >= 2, "need at least 2 keyframes per timestep, got {n_key}");
        frames
    };
    let base: Vec<usize> = (0..n_key).map(|j| j * span / n_key).collect();
    // Smallest shift that maps the slot set onto itself.
    let cycle = (1..=span)
        .find(|&c| {
            let mut shifted: Vec<usize> = base.iter().map(|&b| (b + c) % span).collect();
            shifted.sort_unstable();
            shifted == base
        })
        .unwrap_or(span);
    Ok(CyclicSchedule {
        frames,
        n_key,
        anchors,
        base,
        cycle,
    })
}

impl CyclicSchedule {
    /// Number of timesteps after which the sets repeat.
    pub fn cycle_length(&self) -> usize {
        self.cycle
    }

    /// Sorted 0-based keyframes at step `step` (0 for the first sampling
    /// step).
    pub fn keyframes(&self, step: usize) -> Vec<usize> {
        let span = if self.anchors { self.frames - 2 } else { self.frames };
        let off = usize::from(self.anchors);
        let mut out: Vec<usize> = self.base.iter().map(|&b| (b + step) % span + off).collect();
        if self.anchors {
            out.push(0);
            out.push(self.frames - 1);
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// One line per step of a full cycle, 1-based frames.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "# keyframes per step in a {}-frame window, cycle {} (1-based)\n",
            self.frames, self.cycle
        );
        for step in 0..self.cycle {
            let line: Vec<String> = self.keyframes(step).iter().map(|i| (i + 1).to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchored_window_cycles_the_interior() {
        let s = cyclic_schedule(6, 1, true).unwrap();
        let sets: Vec<_> = (0..5).map(|k| s.keyframes(k)).collect();
        assert_eq!(sets[0], vec![0, 1, 5]);
        assert_eq!(sets[3], vec![0, 4, 5]);
        assert_eq!(sets[4], sets[0]);
        assert_eq!(s.cycle_length(), 4);
    }

    #[test]
    fn rejects_oversized_sets() {
        assert!(cyclic_schedule(4, 5, false).is_err());
        assert!(cyclic_schedule(4, 3, true).is_err());
        assert!(cyclic_schedule(4, 1, false).is_err());
    }
}
