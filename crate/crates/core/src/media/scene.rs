//! Procedural test clips: rectangular textured sprites translating over a
//! static textured background, with exact flows and occlusion masks.

use std::path::Path;

use ini::Ini;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::FrameSequence;
use crate::correspondence::{ClipCorrespondence, FlowField, OcclusionMask};
use crate::error::{ensure, FrescoError, Result};
use crate::scalar::Real;
use crate::seeding::mix_seed;
use crate::tensor::{bilinear_taps, Grid};

/// One moving rectangle. Its top-left corner is at `(x + i·dx, y + i·dy)` in
/// frame `i`; it covers pixel centers `p` with `left ≤ p.x < left + width`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sprite {
    pub texture_seed: u64,
    pub width: f64,
    pub height: f64,
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Sprite {
    pub fn position(&self, frame: usize) -> (f64, f64) {
        (self.x + frame as f64 * self.dx, self.y + frame as f64 * self.dy)
    }

    fn covers(&self, frame: usize, px: f64, py: f64) -> bool {
        let (sx, sy) = self.position(frame);
        px >= sx && px < sx + self.width && py >= sy && py < sy + self.height
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub background_seed: u64,
    pub frame_rate: f64,
    /// Back to front.
    pub sprites: Vec<Sprite>,
}

/// Output of [`synthesize_scene`]: frames plus ground truth for every
/// consecutive pair `(i, i+1)`.
#[derive(Clone, Debug)]
pub struct SyntheticScene<T> {
    pub frames: FrameSequence<T>,
    pub flows: Vec<FlowField<T>>,
    pub masks: Vec<OcclusionMask>,
    /// Ground truth for every pair `(i+1, i)`, on frame `i`'s grid.
    pub backward_flows: Vec<FlowField<T>>,
    pub backward_masks: Vec<OcclusionMask>,
}

impl<T: Real> SyntheticScene<T> {
    pub fn correspondence(&self) -> ClipCorrespondence<T> {
        ClipCorrespondence {
            forward: self.flows.clone(),
            forward_masks: self.masks.clone(),
            backward: self.backward_flows.clone(),
            backward_masks: self.backward_masks.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Wave {
    amp: [f64; 3],
    kx: f64,
    ky: f64,
    phase: f64,
}

#[derive(Clone, Debug)]
struct Texture {
    base: [f64; 3],
    waves: Vec<Wave>,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, base_lo: f64, base_hi: f64) -> Self {
        let base = [
            rng.random_range(base_lo..base_hi),
            rng.random_range(base_lo..base_hi),
            rng.random_range(base_lo..base_hi),
        ];
        let waves = (0..3)
            .map(|_| {
                let k = rng.random_range(0.12..0.4);
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                Wave {
                    amp: [
                        rng.random_range(0.02..0.08),
                        rng.random_range(0.02..0.08),
                        rng.random_range(0.02..0.08),
                    ],
                    kx: k * theta.cos(),
                    ky: k * theta.sin(),
                    phase: rng.random_range(0.0..std::f64::consts::TAU),
                }
            })
            .collect();
        Self { base, waves }
    }

    fn value(&self, x: f64, y: f64, c: usize) -> f64 {
        let mut v = self.base[c];
        for w in &self.waves {
            v += w.amp[c] * (w.kx * x + w.ky * y + w.phase).sin();
        }
        v.clamp(0.0, 1.0)
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.frames >= 2, "a scene needs at least 2 frames, got {}", self.frames);
        ensure!(self.height >= 1 && self.width >= 1, "scene canvas must be non-empty");
        for (k, s) in self.sprites.iter().enumerate() {
            ensure!(
                s.width > 0.0 && s.height > 0.0 && s.width.is_finite() && s.height.is_finite(),
                "sprite {k} must have a positive finite size"
            );
            ensure!(
                [s.x, s.y, s.dx, s.dy].iter().all(|v| v.is_finite()),
                "sprite {k} has a non-finite position or displacement"
            );
            let (lx, ly) = s.position(self.frames - 1);
            ensure!(lx.is_finite() && ly.is_finite(), "sprite {k} leaves the representable range");
        }
        Ok(())
    }

    /// Parse the INI description: global `height`, `width`, `frames`,
    /// `background_seed` (and optional `frame_rate`), then one `[sprite]`
    /// section per sprite with `seed`, `width`, `height`, `x`, `y`, `dx`, `dy`.
    pub fn from_ini_str(text: &str) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| FrescoError::format(format!("scene spec: {e}")))?;
        let general = ini.general_section();
        let get = |key: &str| -> Result<&str> {
            general
                .get(key)
                .ok_or_else(|| FrescoError::format(format!("scene spec: missing key `{key}`")))
        };
        let spec = SceneSpec {
            height: parse_num(get("height")?, "height")?,
            width: parse_num(get("width")?, "width")?,
            frames: parse_num(get("frames")?, "frames")?,
            background_seed: general.get("background_seed").map_or(Ok(0), |v| parse_num(v, "background_seed"))?,
            frame_rate: general.get("frame_rate").map_or(Ok(24.0), |v| parse_num(v, "frame_rate"))?,
            sprites: ini
                .section_all(Some("sprite"))
                .map(|s| {
                    let f = |key: &str, default: Option<f64>| -> Result<f64> {
                        match (s.get(key), default) {
                            (Some(v), _) => parse_num(v, key),
                            (None, Some(d)) => Ok(d),
                            (None, None) => Err(FrescoError::format(format!("sprite: missing key `{key}`"))),
                        }
                    };
                    Ok(Sprite {
                        texture_seed: s.get("seed").map_or(Ok(0), |v| parse_num(v, "seed"))?,
                        width: f("width", None)?,
                        height: f("height", None)?,
                        x: f("x", None)?,
                        y: f("y", None)?,
                        dx: f("dx", Some(0.0))?,
                        dy: f("dy", Some(0.0))?,
                    })
                })
                .collect::<Result<_>>()?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_ini_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FrescoError::io(path, e))?;
        Self::from_ini_str(&text)
    }

    pub fn to_ini_string(&self) -> String {
        let mut s = format!(
            "height = {}\nwidth = {}\nframes = {}\nbackground_seed = {}\nframe_rate = {}\n",
            self.height, self.width, self.frames, self.background_seed, self.frame_rate
        );
        for sp in &self.sprites {
            s.push_str(&format!(
                "\n[sprite]\nseed = {}\nwidth = {}\nheight = {}\nx = {}\ny = {}\ndx = {}\ndy = {}\n",
                sp.texture_seed, sp.width, sp.height, sp.x, sp.y, sp.dx, sp.dy
            ));
        }
        s
    }

    /// Index of the front-most sprite visible at pixel `(px, py)` in `frame`,
    /// or `None` for background.
    pub fn surface_at(&self, frame: usize, px: usize, py: usize) -> Option<usize> {
        let (x, y) = (px as f64, py as f64);
        self.sprites.iter().rposition(|s| s.covers(frame, x, y))
    }

    /// Ground-truth backward flow from frame `source` to frame `target`,
    /// stored on `target`'s grid.
    pub fn flow_between<T: Real>(&self, source: usize, target: usize) -> FlowField<T> {
        let mut g = Grid::zeros(self.height, self.width, 2);
        for py in 0..self.height {
            for px in 0..self.width {
                if let Some(k) = self.surface_at(target, px, py) {
                    let (sx, sy) = self.sprites[k].position(source);
                    let (tx, ty) = self.sprites[k].position(target);
                    g.set(py, px, 0, T::lit(sx - tx));
                    g.set(py, px, 1, T::lit(sy - ty));
                }
            }
        }
        FlowField::new(source, target, g).expect("two-channel grid")
    }

    /// Ground-truth validity on `target`'s grid: a pixel is valid iff every
    /// bilinear tap of its pre-image in `source` lies on the canvas and shows
    /// the same surface.
    pub fn mask_between(&self, source: usize, target: usize) -> OcclusionMask {
        let flow = self.flow_between::<f64>(source, target);
        let mut valid = vec![false; self.height * self.width];
        for py in 0..self.height {
            for px in 0..self.width {
                let surf = self.surface_at(target, px, py);
                let v = flow.vectors().pixel(py, px);
                let Some(taps) = bilinear_taps(px as f64 + v[0], py as f64 + v[1], self.width, self.height) else {
                    continue;
                };
                valid[py * self.width + px] = taps
                    .iter()
                    .filter(|(_, w)| *w > 0.0)
                    .all(|&(idx, _)| self.surface_at(source, idx % self.width, idx / self.width) == surf);
            }
        }
        OcclusionMask::new(source, target, self.height, self.width, valid).expect("sized mask")
    }

    fn render<T: Real>(&self, frame: usize, bg: &Texture, tex: &[Texture]) -> Grid<T> {
        Grid::from_fn(self.height, self.width, 3, |py, px, c| {
            let v = match self.surface_at(frame, px, py) {
                None => bg.value(px as f64, py as f64, c),
                Some(k) => {
                    let (sx, sy) = self.sprites[k].position(frame);
                    tex[k].value(px as f64 - sx, py as f64 - sy, c)
                }
            };
            T::lit(v)
        })
    }
}

fn parse_num<N: std::str::FromStr>(v: &str, key: &str) -> Result<N> {
    v.trim()
        .parse()
        .map_err(|_| FrescoError::format(format!("scene spec: cannot parse `{key}` value `{v}`")))
}

/// Render a scene and its ground-truth consecutive flows and masks. Pure in
/// `(spec, seed)`.
pub fn synthesize_scene<T: Real>(spec: &SceneSpec, seed: u64) -> Result<SyntheticScene<T>> {
    spec.validate()?;
    let mut bg_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, spec.background_seed));
    let bg = Texture::random(&mut bg_rng, 0.3, 0.7);
    let tex: Vec<Texture> = spec
        .sprites
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(seed, s.texture_seed), k as u64 + 1));
            Texture::random(&mut rng, 0.2, 0.8)
        })
        .collect();
    let frames = (0..spec.frames).map(|i| spec.render(i, &bg, &tex)).collect();
    let frames = FrameSequence::new(frames, spec.frame_rate)?;
    let flows = (0..spec.frames - 1).map(|i| spec.flow_between(i, i + 1)).collect();
    let masks = (0..spec.frames - 1).map(|i| spec.mask_between(i, i + 1)).collect();
    let backward_flows = (0..spec.frames - 1).map(|i| spec.flow_between(i + 1, i)).collect();
    let backward_masks = (0..spec.frames - 1).map(|i| spec.mask_between(i + 1, i)).collect();
    Ok(SyntheticScene {
        frames,
        flows,
        masks,
        backward_flows,
        backward_masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_sprite(dx: f64, dy: f64) -> SceneSpec {
        SceneSpec {
            height: 24,
            width: 32,
            frames: 3,
            background_seed: 3,
            frame_rate: 24.0,
            sprites: vec![Sprite {
                texture_seed: 9,
                width: 8.0,
                height: 6.0,
                x: 10.0,
                y: 8.0,
                dx,
                dy,
            }],
        }
    }

    #[test]
    fn moving_sprite_flow_and_trailing_band() {
        let spec = one_sprite(2.0, 0.0);
        let s = synthesize_scene::<f64>(&spec, 1).unwrap();
        let flow = &s.flows[0];
        let mask = &s.masks[0];
        for py in 0..24 {
            for px in 0..32 {
                let on_sprite = (12..20).contains(&px) && (8..14).contains(&py);
                let v = flow.vectors().pixel(py, px);
                if on_sprite {
                    assert_eq!(v, &[-2.0, 0.0]);
                } else {
                    assert_eq!(v, &[0.0, 0.0]);
                }
                let band = (10..12).contains(&px) && (8..14).contains(&py);
                assert_eq!(mask.is_valid(py, px), !band, "pixel ({px},{py})");
            }
        }
    }

    #[test]
    fn static_scene_is_fully_valid() {
        let spec = one_sprite(0.0, 0.0);
        let s = synthesize_scene::<f64>(&spec, 4).unwrap();
        for (f, m) in s.flows.iter().zip(&s.masks) {
            assert!(f.vectors().data().iter().all(|&v| v == 0.0));
            assert_eq!(m.valid_count(), 24 * 32);
        }
        assert_eq!(s.frames.frame(0), s.frames.frame(2));
    }

    #[test]
    fn exiting_sprite_exposes_background() {
        let mut spec = one_sprite(3.0, 0.0);
        spec.sprites[0].x = 27.0;
        let s = synthesize_scene::<f64>(&spec, 2).unwrap();
        // frame 0 covers x in [27, 32); frame 1 covers [30, 32) on canvas.
        // Newly exposed background: x in [27, 30), rows 8..14.
        let m = &s.masks[0];
        for py in 0..24 {
            for px in 0..32 {
                let exposed = (27..30).contains(&px) && (8..14).contains(&py);
                assert_eq!(m.is_valid(py, px), !exposed, "pixel ({px},{py})");
            }
        }
    }

    #[test]
    fn entering_sprite_marks_new_content_invalid() {
        let mut spec = one_sprite(2.0, 0.0);
        spec.sprites[0].x = -6.0;
        let s = synthesize_scene::<f64>(&spec, 2).unwrap();
        let m = &s.masks[0];
        // frame 1 sprite covers x in [-4, 4) → on-canvas [0, 4); pre-image of
        // x in {0, 1} is off-canvas, x in {2, 3} maps onto sprite pixels {0, 1}.
        assert!(!m.is_valid(10, 0) && !m.is_valid(10, 1));
        assert!(m.is_valid(10, 2) && m.is_valid(10, 3));
        // background ahead of the sprite stays valid
        assert!(m.is_valid(10, 4) && m.is_valid(10, 5));
    }

    #[test]
    fn ini_roundtrip() {
        let spec = one_sprite(1.5, -0.5);
        let back = SceneSpec::from_ini_str(&spec.to_ini_string()).unwrap();
        assert_eq!(back, spec);
        assert!(SceneSpec::from_ini_str("height = 4\nwidth = 4\nframes = 1\n").is_err());
        assert!(SceneSpec::from_ini_str("height = 4\nwidth = 4\n").is_err());
    }
}
