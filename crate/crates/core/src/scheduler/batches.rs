use crate::error::{ensure, Result};

/// Split of `count` keyframe positions into batches of at most `batch_size`.
///
/// Positions are 0-based. Batch 1 is `{0, …, N−1}`; batch `k ≥ 2` is the
/// global first position followed by the last position of batch `k−1` and
/// the next `N−2` positions. In 1-based terms batch `k` is
/// `{1, (k−1)(N−2)+2, …, k(N−2)+2}`, truncated at `count`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub count: usize,
    pub batches: Vec<Vec<usize>>,
}

/// Where an anchor slot's latents come from: batch `batch`, slot `slot`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnchorSource {
    pub slot: usize,
    pub batch: usize,
    pub source_slot: usize,
}

pub fn batch_plan(count: usize, batch_size: usize) -> Result<BatchPlan> {
    ensure!(batch_size >= 3, "batch size must be at least 3 to hold two anchors, got {batch_size}");
    ensure!(count >= 1, "batch plan needs at least one position");
    let n = batch_size;
    let mut batches = vec![(0..n.min(count)).collect::<Vec<_>>()];
    let mut k = 2;
    loop {
        // 0-based start of batch k's run: (k−1)(N−2)+1.
        let start = (k - 1) * (n - 2) + 1;
        if start + 1 >= count {
            break;
        }
        let end = (k * (n - 2) + 1).min(count - 1);
        let mut b = vec![0];
        b.extend(start..=end);
        batches.push(b);
        k += 1;
    }
    Ok(BatchPlan {
        batch_size: n,
        count,
        batches,
    })
}

impl BatchPlan {
    /// Anchor slots of batch `k` (0-based) and where their latents are
    /// recorded. Empty for the first batch.
    pub fn anchors(&self, k: usize) -> Vec<AnchorSource> {
        if k == 0 {
            return Vec::new();
        }
        vec![
            AnchorSource {
                slot: 0,
                batch: 0,
                source_slot: 0,
            },
            AnchorSource {
                slot: 1,
                batch: k - 1,
                source_slot: self.batches[k - 1].len() - 1,
            },
        ]
    }

    /// Slots of batch `k` whose trajectories a later batch substitutes.
    pub fn recorded_slots(&self, k: usize) -> Vec<usize> {
        if k + 1 >= self.batches.len() {
            return Vec::new();
        }
        let last = self.batches[k].len() - 1;
        if k == 0 {
            if last == 0 {
                vec![0]
            } else {
                vec![0, last]
            }
        } else {
            vec![last]
        }
    }

    /// One line per batch with 1-based positions.
    pub fn to_text(&self) -> String {
        let mut s = format!("# batches of size {} over {} positions (1-based)\n", self.batch_size, self.count);
        for b in &self.batches {
            let line: Vec<String> = b.iter().map(|i| (i + 1).to_string()).collect();
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
    fn truncated_tail_keeps_anchors() {
        let p = batch_plan(10, 8).unwrap();
        assert_eq!(p.batches, vec![(0..8).collect::<Vec<_>>(), vec![0, 7, 8, 9]]);
        assert_eq!(p.recorded_slots(0), vec![0, 7]);
        assert_eq!(p.anchors(1)[1], AnchorSource { slot: 1, batch: 0, source_slot: 7 });
    }

    #[test]
    fn short_inputs() {
        assert_eq!(batch_plan(1, 8).unwrap().batches, vec![vec![0]]);
        assert_eq!(batch_plan(8, 8).unwrap().batches.len(), 1);
        assert_eq!(batch_plan(9, 8).unwrap().batches[1], vec![0, 7, 8]);
        assert!(batch_plan(5, 2).is_err());
    }
}
