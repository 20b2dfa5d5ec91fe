//! Inter-frame correspondence: flows, occlusion masks, warping, token-grid
//! downscaling and the attention indices built from them.
//!
//! Convention: a flow `i → j` lives on frame `j`'s grid and is a backward
//! map. The content of pixel `p` in frame `j` is found in frame `i` at
//! `p + flow(p)`. Masks live on the same grid as their flow.

mod compose;
mod flow;
mod index;
mod io;
mod occlusion;
mod tokens;
mod warp;

pub use compose::{compose_chain, compose_flows, ClipCorrespondence};
pub use flow::{estimate_flow, FlowConfig};
pub use index::{build_flow_chains, build_unique_index, AttentionIndex, TokenLayout, TokenRef};
pub use io::{load_correspondence, save_correspondence};
pub use occlusion::occlusion_mask;
pub use tokens::downscale_to_tokens;
pub use warp::{warp, warp_grid, warp_transpose};

use crate::error::{ensure, Result};
use crate::scalar::Real;
use crate::tensor::Grid;

/// Dense backward flow from frame `source` to frame `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField<T> {
    source: usize,
    target: usize,
    vectors: Grid<T>,
}

impl<T: Real> FlowField<T> {
    pub fn new(source: usize, target: usize, vectors: Grid<T>) -> Result<Self> {
        ensure!(vectors.channels() == 2, "flow grids carry (dx, dy) pairs");
        ensure!(vectors.is_finite(), "flow contains non-finite values");
        Ok(Self {
            source,
            target,
            vectors,
        })
    }

    pub fn zeros(source: usize, target: usize, height: usize, width: usize) -> Self {
        Self {
            source,
            target,
            vectors: Grid::zeros(height, width, 2),
        }
    }

    /// Same displacement at every pixel.
    pub fn uniform(source: usize, target: usize, height: usize, width: usize, dx: T, dy: T) -> Self {
        Self {
            source,
            target,
            vectors: Grid::from_fn(height, width, 2, |_, _, c| if c == 0 { dx } else { dy }),
        }
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn height(&self) -> usize {
        self.vectors.height()
    }

    pub fn width(&self) -> usize {
        self.vectors.width()
    }

    pub fn vectors(&self) -> &Grid<T> {
        &self.vectors
    }

    pub fn into_vectors(self) -> Grid<T> {
        self.vectors
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> (T, T) {
        let v = self.vectors.pixel(y, x);
        (v[0], v[1])
    }

    pub fn relabel(mut self, source: usize, target: usize) -> Self {
        self.source = source;
        self.target = target;
        self
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            source: self.source,
            target: self.target,
            vectors: self.vectors.map(|v| v * s),
        }
    }
}

/// Binary validity map for the pair `(source, target)`; `true` means a
/// reliable correspondence exists.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OcclusionMask {
    source: usize,
    target: usize,
    height: usize,
    width: usize,
    valid: Vec<bool>,
}

impl OcclusionMask {
    pub fn new(source: usize, target: usize, height: usize, width: usize, valid: Vec<bool>) -> Result<Self> {
        ensure!(
            valid.len() == height * width,
            "mask length {} does not match {}x{}",
            valid.len(),
            height,
            width
        );
        Ok(Self {
            source,
            target,
            height,
            width,
            valid,
        })
    }

    pub fn all_valid(source: usize, target: usize, height: usize, width: usize) -> Self {
        Self {
            source,
            target,
            height,
            width,
            valid: vec![true; height * width],
        }
    }

    pub fn all_invalid(source: usize, target: usize, height: usize, width: usize) -> Self {
        Self {
            source,
            target,
            height,
            width,
            valid: vec![false; height * width],
        }
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn is_valid(&self, y: usize, x: usize) -> bool {
        self.valid[y * self.width + x]
    }

    #[inline]
    pub fn is_valid_at(&self, idx: usize) -> bool {
        self.valid[idx]
    }

    pub fn values(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn relabel(mut self, source: usize, target: usize) -> Self {
        self.source = source;
        self.target = target;
        self
    }

    /// Mask as a one-channel `{0, 1}` grid.
    pub fn to_grid<T: Real>(&self) -> Grid<T> {
        Grid::from_fn(self.height, self.width, 1, |y, x, _| {
            if self.is_valid(y, x) {
                T::one()
            } else {
                T::zero()
            }
        })
    }
}
