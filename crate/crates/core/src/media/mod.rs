//! Frame I/O, synthetic scenes with analytic ground truth, and structure maps.

mod ppm;
mod scene;
mod structure;

use std::fs;
use std::path::{Path, PathBuf};

pub use ppm::{decode_ppm, encode_ppm};
pub use scene::{synthesize_scene, SceneSpec, Sprite, SyntheticScene};
pub use structure::{extract_structure, luminance, StructureMap};

use crate::error::{ensure, FrescoError, Result};
use crate::ftns::Tensor;
use crate::scalar::Real;
use crate::tensor::Grid;

/// Ordered RGB frames of one clip. Every frame is `H × W × 3` with values in
/// `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence<T> {
    frames: Vec<Grid<T>>,
    frame_rate: f64,
}

impl<T: Real> FrameSequence<T> {
    pub fn new(frames: Vec<Grid<T>>, frame_rate: f64) -> Result<Self> {
        ensure!(!frames.is_empty(), "a frame sequence needs at least one frame");
        let (h, w, _) = frames[0].dims();
        for (i, f) in frames.iter().enumerate() {
            ensure!(
                f.dims() == (h, w, 3),
                "frame {i} has shape {:?}, expected ({h}, {w}, 3)",
                f.dims()
            );
            ensure!(
                f.data().iter().all(|v| v.is_finite() && *v >= T::zero() && *v <= T::one()),
                "frame {i} has values outside [0, 1]"
            );
        }
        Ok(Self { frames, frame_rate })
    }

    /// Build from frames that may have drifted outside `[0, 1]` (decoder
    /// output); values are clamped.
    pub fn from_clamped(frames: Vec<Grid<T>>, frame_rate: f64) -> Result<Self> {
        let frames = frames
            .into_iter()
            .map(|f| f.map(|v| if v.is_nan() { T::zero() } else { v.max(T::zero()).min(T::one()) }))
            .collect();
        Self::new(frames, frame_rate)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn frames(&self) -> &[Grid<T>] {
        &self.frames
    }

    pub fn frame(&self, i: usize) -> &Grid<T> {
        &self.frames[i]
    }

    pub fn into_frames(self) -> Vec<Grid<T>> {
        self.frames
    }

    /// Frames at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        ensure!(indices.iter().all(|&i| i < self.len()), "frame index out of range");
        Self::new(indices.iter().map(|&i| self.frames[i].clone()).collect(), self.frame_rate)
    }
}

fn is_frame_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("ppm") | Some("ftns")
    )
}

fn wildcard_match(pattern: &[u8], name: &[u8]) -> bool {
    match (pattern.first(), name.first()) {
        (None, None) => true,
        (Some(b'*'), _) => {
            wildcard_match(&pattern[1..], name) || (!name.is_empty() && wildcard_match(pattern, &name[1..]))
        }
        (Some(b'?'), Some(_)) => wildcard_match(&pattern[1..], &name[1..]),
        (Some(a), Some(b)) if a == b => wildcard_match(&pattern[1..], &name[1..]),
        _ => false,
    }
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| FrescoError::io(dir, e))? {
        let entry = entry.map_err(|e| FrescoError::io(dir, e))?;
        out.push(entry.path());
    }
    Ok(out)
}

fn decode_frame_file<T: Real>(path: &Path) -> Result<Vec<Grid<T>>> {
    let bytes = fs::read(path).map_err(|e| FrescoError::io(path, e))?;
    let named = |e: FrescoError| match e {
        FrescoError::Format(m) | FrescoError::Contract(m) => {
            FrescoError::format(format!("{}: {m}", path.display()))
        }
        other => other,
    };
    if bytes.starts_with(crate::ftns::MAGIC) {
        let t = Tensor::from_bytes(&bytes).map_err(named)?;
        match t.dims.as_slice() {
            [n, h, w, 3] => {
                let per = h * w * 3;
                (0..*n)
                    .map(|i| {
                        Grid::from_vec(*h, *w, 3, t.data[i * per..(i + 1) * per].iter().map(|&v| T::lit(v as f64)).collect())
                    })
                    .collect::<Result<Vec<_>>>()
                    .map_err(named)
            }
            [_, _, 3] => Ok(vec![t.to_grid().map_err(named)?]),
            d => Err(FrescoError::format(format!("{}: FTNS frame must be HxWx3 or NxHxWx3, got {d:?}", path.display()))),
        }
    } else {
        Ok(vec![decode_ppm(&bytes).map_err(named)?])
    }
}

/// Load frames from a directory (every `.ppm`/`.ftns` file), a wildcard
/// pattern such as `clip/frame_*.ppm`, or a single file. Files are ordered by
/// file name. A rank-4 FTNS file holds a whole sequence.
pub fn load_frames<T: Real>(source: &Path) -> Result<FrameSequence<T>> {
    let files: Vec<PathBuf> = if source.is_dir() {
        let mut v: Vec<_> = list_dir(source)?.into_iter().filter(|p| p.is_file() && is_frame_file(p)).collect();
        v.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        v
    } else if source.is_file() {
        vec![source.to_path_buf()]
    } else {
        let name = source.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if !name.contains(['*', '?']) {
            return Err(FrescoError::io(
                source,
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            ));
        }
        let dir = source.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut v: Vec<_> = list_dir(dir)?
            .into_iter()
            .filter(|p| {
                p.is_file()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| wildcard_match(name.as_bytes(), n.as_bytes()))
            })
            .collect();
        v.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
        v
    };
    if files.is_empty() {
        return Err(FrescoError::format(format!("no frames found in {}", source.display())));
    }
    let mut frames = Vec::new();
    for f in &files {
        frames.extend(decode_frame_file::<T>(f)?);
    }
    let (h, w) = (frames[0].height(), frames[0].width());
    for (i, f) in frames.iter().enumerate() {
        if (f.height(), f.width()) != (h, w) {
            return Err(FrescoError::format(format!(
                "dimension mismatch: frame {i} is {}x{}, expected {w}x{h}",
                f.width(),
                f.height()
            )));
        }
        if !f.data().iter().all(|v| v.is_finite() && *v >= T::zero() && *v <= T::one()) {
            return Err(FrescoError::format(format!("frame {i} has values outside [0, 1]")));
        }
    }
    FrameSequence::new(frames, 24.0)
}

fn frame_path(dir: &Path, i: usize, ext: &str) -> PathBuf {
    dir.join(format!("frame_{i:05}.{ext}"))
}

/// Write one 8-bit P6 PPM per frame (`frame_00000.ppm`, ...).
pub fn save_frames<T: Real>(seq: &FrameSequence<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FrescoError::io(dir, e))?;
    for (i, f) in seq.frames().iter().enumerate() {
        let p = frame_path(dir, i, "ppm");
        fs::write(&p, encode_ppm(f)).map_err(|e| FrescoError::io(&p, e))?;
    }
    Ok(())
}

/// Lossless (f32) variant of [`save_frames`].
pub fn save_frames_ftns<T: Real>(seq: &FrameSequence<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| FrescoError::io(dir, e))?;
    for (i, f) in seq.frames().iter().enumerate() {
        Tensor::from_grid(f).write(&frame_path(dir, i, "ftns"))?;
    }
    Ok(())
}
