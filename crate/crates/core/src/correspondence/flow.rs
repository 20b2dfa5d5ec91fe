use super::FlowField;
use crate::error::{ensure, Result};
use crate::scalar::Real;
use crate::tensor::Grid;

/// Block-matching parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlowConfig {
    pub block: usize,
    pub radius: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self { block: 8, radius: 4 }
    }
}

/// Exhaustive block matching. For every `block × block` tile of `target`
/// (edge tiles are clipped), pick the integer displacement `d` with
/// `|d_x|, |d_y| ≤ radius` that minimises the sum of squared differences
/// between `target(p)` and `source(p + d)` over the tile, considering only
/// displacements that keep the whole tile inside `source`. Ties go to the
/// smallest `|d|²`, then to row-major order of `(d_y, d_x)`. The winning
/// displacement is written to every pixel of the tile, giving the backward
/// flow `source → target` on `target`'s grid.
pub fn estimate_flow<T: Real>(source: &Grid<T>, target: &Grid<T>, cfg: FlowConfig) -> Result<Grid<T>> {
    ensure!(source.same_shape(target), "flow estimation needs same-size frames");
    ensure!(cfg.block >= 1, "block size must be at least 1");
    let (h, w, ch) = target.dims();
    let r = cfg.radius as isize;
    let mut out = Grid::zeros(h, w, 2);
    for by0 in (0..h).step_by(cfg.block) {
        let by1 = (by0 + cfg.block).min(h);
        for bx0 in (0..w).step_by(cfg.block) {
            let bx1 = (bx0 + cfg.block).min(w);
            let mut best: Option<(T, isize, isize, isize)> = None;
            for dy in -r..=r {
                if (by0 as isize) + dy < 0 || (by1 as isize - 1) + dy > h as isize - 1 {
                    continue;
                }
                for dx in -r..=r {
                    if (bx0 as isize) + dx < 0 || (bx1 as isize - 1) + dx > w as isize - 1 {
                        continue;
                    }
                    let mut ssd = T::zero();
                    for y in by0..by1 {
                        let sy = (y as isize + dy) as usize;
                        let trow = &target.data()[(y * w + bx0) * ch..(y * w + bx1) * ch];
                        let sx0 = (bx0 as isize + dx) as usize;
                        let srow = &source.data()[(sy * w + sx0) * ch..(sy * w + sx0 + (bx1 - bx0)) * ch];
                        for (&a, &b) in trow.iter().zip(srow) {
                            let d = a - b;
                            ssd += d * d;
                        }
                    }
                    let mag = dx * dx + dy * dy;
                    let better = match best {
                        None => true,
                        Some((bs, bm, _, _)) => ssd < bs || (ssd == bs && mag < bm),
                    };
                    if better {
                        best = Some((ssd, mag, dx, dy));
                    }
                }
            }
            let (_, _, dx, dy) = best.expect("zero displacement is always admissible");
            let (fx, fy) = (T::lit(dx as f64), T::lit(dy as f64));
            for y in by0..by1 {
                for x in bx0..bx1 {
                    out.set(y, x, 0, fx);
                    out.set(y, x, 1, fy);
                }
            }
        }
    }
    Ok(out)
}

impl<T: Real> FlowField<T> {
    /// Estimate the flow `source_index → target_index` between two frames.
    pub fn estimate(
        source_index: usize,
        target_index: usize,
        source: &Grid<T>,
        target: &Grid<T>,
        cfg: FlowConfig,
    ) -> Result<Self> {
        FlowField::new(source_index, target_index, estimate_flow(source, target, cfg)?)
    }
}
