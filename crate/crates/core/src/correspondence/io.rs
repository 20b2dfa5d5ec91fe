use std::fs;
use std::path::{Path, PathBuf};

use super::{ClipCorrespondence, FlowField, OcclusionMask};
use crate::error::{FrescoError, Result};
use crate::ftns::Tensor;
use crate::scalar::Real;
use crate::tensor::Grid;

fn file(dir: &Path, kind: &str, k: usize) -> PathBuf {
    dir.join(format!("{kind}_{k:05}.ftns"))
}

fn mask_tensor(m: &OcclusionMask) -> Tensor {
    Tensor {
        dims: vec![m.height(), m.width()],
        data: m.values().iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
    }
}

/// Write every flow (`h × w × 2`) and mask (`h × w`, 1 valid / 0 occluded)
/// as FTNS files: `forward_k`, `forward_mask_k`, `backward_k`,
/// `backward_mask_k` for the pair `(k, k+1)`.
pub fn save_correspondence<T: Real>(corr: &ClipCorrespondence<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FrescoError::io(dir, e))?;
    for k in 0..corr.pairs() {
        Tensor::from_grid(corr.forward[k].vectors()).write(&file(dir, "forward", k))?;
        mask_tensor(&corr.forward_masks[k]).write(&file(dir, "forward_mask", k))?;
        Tensor::from_grid(corr.backward[k].vectors()).write(&file(dir, "backward", k))?;
        mask_tensor(&corr.backward_masks[k]).write(&file(dir, "backward_mask", k))?;
    }
    Ok(())
}

fn read_flow<T: Real>(path: &Path, source: usize, target: usize) -> Result<FlowField<T>> {
    let g: Grid<T> = Tensor::read(path)?.to_grid()?;
    FlowField::new(source, target, g).map_err(|e| FrescoError::format(format!("{}: {e}", path.display())))
}

fn read_mask(path: &Path, source: usize, target: usize) -> Result<OcclusionMask> {
    let t = Tensor::read(path)?;
    let [h, w] = t.dims[..] else {
        return Err(FrescoError::format(format!("{}: mask must be rank 2", path.display())));
    };
    OcclusionMask::new(source, target, h, w, t.data.iter().map(|&v| v > 0.5).collect())
        .map_err(|e| FrescoError::format(format!("{}: {e}", path.display())))
}

/// Read what [`save_correspondence`] wrote for a clip of `frames` frames.
pub fn load_correspondence<T: Real>(dir: &Path, frames: usize) -> Result<ClipCorrespondence<T>> {
    let mut c = ClipCorrespondence {
        forward: Vec::new(),
        forward_masks: Vec::new(),
        backward: Vec::new(),
        backward_masks: Vec::new(),
    };
    for k in 0..frames.saturating_sub(1) {
        c.forward.push(read_flow(&file(dir, "forward", k), k, k + 1)?);
        c.forward_masks.push(read_mask(&file(dir, "forward_mask", k), k, k + 1)?);
        c.backward.push(read_flow(&file(dir, "backward", k), k + 1, k)?);
        c.backward_masks.push(read_mask(&file(dir, "backward_mask", k), k + 1, k)?);
    }
    Ok(c)
}
