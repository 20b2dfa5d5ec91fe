//! Token indices for FRESCO-guided attention.
//!
//! The unique index lists every token whose content is not visible in the
//! previous frame (plus all of frame 0). Flow chains trace each token forward
//! along the flow until it is occluded, and partition every `(frame, token)`.

use super::{FlowField, OcclusionMask};
use crate::error::{ensure, Result};
use crate::scalar::Real;

/// A token: frame index and row-major cell index on the token grid. Ordering
/// is frame-major, then row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TokenRef {
    pub frame: usize,
    pub token: usize,
}

impl TokenRef {
    pub fn new(frame: usize, token: usize) -> Self {
        Self { frame, token }
    }
}

/// Shape of the token grids of one batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl TokenLayout {
    pub fn tokens_per_frame(&self) -> usize {
        self.height * self.width
    }

    pub fn total(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }
}

/// The unique-token index `p_u` and the flow chains `p_f`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionIndex {
    /// Sorted frame-major, row-major.
    pub unique: Vec<TokenRef>,
    pub chains: Vec<Vec<TokenRef>>,
}

impl AttentionIndex {
    pub fn build<T: Real>(layout: TokenLayout, flows: &[FlowField<T>], masks: &[OcclusionMask]) -> Result<Self> {
        Ok(Self {
            unique: build_unique_index(layout, masks)?,
            chains: build_flow_chains(layout, flows, masks)?,
        })
    }
}

fn check_masks(layout: TokenLayout, masks: &[OcclusionMask]) -> Result<()> {
    ensure!(layout.frames >= 1, "token layout needs at least one frame");
    ensure!(
        masks.len() + 1 == layout.frames,
        "expected {} consecutive-pair masks, got {}",
        layout.frames - 1,
        masks.len()
    );
    for m in masks {
        ensure!(
            m.height() == layout.height && m.width() == layout.width,
            "mask {}x{} does not match the {}x{} token grid",
            m.width(),
            m.height(),
            layout.width,
            layout.height
        );
    }
    Ok(())
}

/// `p_u`: all tokens of frame 0, plus every token of frame `i+1` that is
/// invalid in the mask of pair `(i, i+1)`.
pub fn build_unique_index(layout: TokenLayout, masks: &[OcclusionMask]) -> Result<Vec<TokenRef>> {
    check_masks(layout, masks)?;
    let n = layout.tokens_per_frame();
    let mut out: Vec<TokenRef> = (0..n).map(|t| TokenRef::new(0, t)).collect();
    for (i, m) in masks.iter().enumerate() {
        out.extend((0..n).filter(|&t| !m.is_valid_at(t)).map(|t| TokenRef::new(i + 1, t)));
    }
    Ok(out)
}

/// `p_f`: greedy left-to-right chain construction.
///
/// For each pair `(i, i+1)` the stored backward flow is inverted by
/// transport: every mask-valid token `p` of frame `i+1` (row-major) points
/// back to `s = round(p + flow(p))` in frame `i`, and the first such `p`
/// becomes the forward successor of `s`. A chain ending at `s` extends to its
/// successor if it is in bounds, valid and unclaimed; chains are extended in
/// row-major order of their frame-`i` token. Tokens of frame `i+1` that no
/// chain claimed start new chains. Chains are returned ordered by their first
/// token.
pub fn build_flow_chains<T: Real>(
    layout: TokenLayout,
    flows: &[FlowField<T>],
    masks: &[OcclusionMask],
) -> Result<Vec<Vec<TokenRef>>> {
    check_masks(layout, masks)?;
    ensure!(flows.len() == masks.len(), "flows and masks differ in count");
    for f in flows {
        ensure!(
            f.height() == layout.height && f.width() == layout.width,
            "flow does not match the token grid"
        );
    }
    let (h, w) = (layout.height, layout.width);
    let n = h * w;
    let mut chains: Vec<Vec<TokenRef>> = (0..n).map(|t| vec![TokenRef::new(0, t)]).collect();
    // open[t] = chain currently ending at token t of the current frame
    let mut open: Vec<Option<usize>> = (0..n).map(Some).collect();

    for (i, (flow, mask)) in flows.iter().zip(masks).enumerate() {
        let mut successor: Vec<Option<usize>> = vec![None; n];
        for p in 0..n {
            if !mask.is_valid_at(p) {
                continue;
            }
            let (fx, fy) = flow.at(p / w, p % w);
            let sx = (T::from_usize_lossy(p % w) + fx).round();
            let sy = (T::from_usize_lossy(p / w) + fy).round();
            let (Some(sx), Some(sy)) = (sx.to_isize(), sy.to_isize()) else {
                continue;
            };
            if sx < 0 || sy < 0 || sx >= w as isize || sy >= h as isize {
                continue;
            }
            let s = sy as usize * w + sx as usize;
            if successor[s].is_none() {
                successor[s] = Some(p);
            }
        }
        let mut claimed = vec![false; n];
        let mut next_open: Vec<Option<usize>> = vec![None; n];
        for q in 0..n {
            let (Some(chain), Some(p)) = (open[q], successor[q]) else {
                continue;
            };
            if claimed[p] || !mask.is_valid_at(p) {
                continue;
            }
            claimed[p] = true;
            chains[chain].push(TokenRef::new(i + 1, p));
            next_open[p] = Some(chain);
        }
        for p in 0..n {
            if next_open[p].is_none() {
                chains.push(vec![TokenRef::new(i + 1, p)]);
                next_open[p] = Some(chains.len() - 1);
            }
        }
        open = next_open;
    }
    Ok(chains)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(frames: usize, h: usize, w: usize) -> TokenLayout {
        TokenLayout {
            frames,
            height: h,
            width: w,
        }
    }

    #[test]
    fn static_video_unique_is_first_frame() {
        let masks: Vec<_> = (0..3).map(|i| OcclusionMask::all_valid(i, i + 1, 2, 3)).collect();
        let pu = build_unique_index(layout(4, 2, 3), &masks).unwrap();
        assert_eq!(pu, (0..6).map(|t| TokenRef::new(0, t)).collect::<Vec<_>>());
    }

    #[test]
    fn one_disoccluded_token_is_added() {
        let mut valid = vec![true; 6];
        valid[4] = false;
        let masks = vec![OcclusionMask::new(0, 1, 2, 3, valid).unwrap()];
        let pu = build_unique_index(layout(2, 2, 3), &masks).unwrap();
        assert_eq!(pu.len(), 7);
        assert_eq!(pu[6], TokenRef::new(1, 4));
    }

    #[test]
    fn static_chains_span_all_frames() {
        let flows: Vec<_> = (0..3).map(|i| FlowField::<f64>::zeros(i, i + 1, 2, 2)).collect();
        let masks: Vec<_> = (0..3).map(|i| OcclusionMask::all_valid(i, i + 1, 2, 2)).collect();
        let chains = build_flow_chains(layout(4, 2, 2), &flows, &masks).unwrap();
        assert_eq!(chains.len(), 4);
        for (t, c) in chains.iter().enumerate() {
            assert_eq!(c, &(0..4).map(|f| TokenRef::new(f, t)).collect::<Vec<_>>());
        }
    }

    #[test]
    fn integer_translation_hand_trace() {
        // 4x4 tokens, content moves right by one token per frame: the
        // backward flow is (-1, 0); column 0 is new content every frame.
        let (h, w, n) = (4, 4, 4);
        let flows: Vec<_> = (0..n - 1).map(|i| FlowField::<f64>::uniform(i, i + 1, h, w, -1.0, 0.0)).collect();
        let masks: Vec<_> = (0..n - 1)
            .map(|i| OcclusionMask::new(i, i + 1, h, w, (0..h * w).map(|t| t % w != 0).collect()).unwrap())
            .collect();
        let chains = build_flow_chains(layout(n, h, w), &flows, &masks).unwrap();
        // frame-0 column 0 travels the whole clip
        for row in 0..h {
            let c = chains.iter().find(|c| c[0] == TokenRef::new(0, row * w)).unwrap();
            assert_eq!(c.len(), n);
            assert_eq!(c[3], TokenRef::new(3, row * w + 3));
        }
        // frame-0 column 3 leaves the canvas immediately
        assert!(chains.iter().any(|c| c == &vec![TokenRef::new(0, 3)]));
        // new column-0 content of frame 2 lives for two frames
        let c = chains.iter().find(|c| c[0] == TokenRef::new(2, 0)).unwrap();
        assert_eq!(c, &vec![TokenRef::new(2, 0), TokenRef::new(3, 1)]);
        let total: usize = chains.iter().map(Vec::len).sum();
        assert_eq!(total, n * h * w);
    }

    #[test]
    fn fully_occluded_pair_breaks_every_chain() {
        let flows = vec![FlowField::<f64>::zeros(0, 1, 2, 2), FlowField::zeros(1, 2, 2, 2)];
        let masks = vec![OcclusionMask::all_valid(0, 1, 2, 2), OcclusionMask::all_invalid(1, 2, 2, 2)];
        let chains = build_flow_chains(layout(3, 2, 2), &flows, &masks).unwrap();
        assert_eq!(chains.len(), 8);
        assert!(chains.iter().all(|c| c.last().unwrap().frame != 2 || c.len() == 1));
    }

    #[test]
    fn single_frame_has_unit_chains() {
        let chains = build_flow_chains::<f64>(layout(1, 2, 3), &[], &[]).unwrap();
        assert_eq!(chains.len(), 6);
        assert!(chains.iter().all(|c| c.len() == 1));
    }
}
