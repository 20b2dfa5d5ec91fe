use crate::error::{ensure, Result};
use crate::scalar::Real;
use crate::seeding::normal_vec;
use crate::tensor::{Grid, Matrix};

/// Stand-in image codec: 2× average pooling and a seeded linear colour map
/// to `latent_channels`; decoding applies the map's pseudo-inverse and a
/// bilinear 2× upsample.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCodec<T> {
    /// `latent_channels × 3`.
    map: Matrix<T>,
    /// `3 × latent_channels`, `(MᵀM)⁻¹Mᵀ`.
    pinv: Matrix<T>,
}

const CODEC_STREAM: u64 = 0xC0DE;

fn invert3<T: Real>(m: &Matrix<T>) -> Option<Matrix<T>> {
    let a = |r, c| m.get(r, c);
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| a(r0, c0) * a(r1, c1) - a(r0, c1) * a(r1, c0);
    let det = a(0, 0) * cof(1, 2, 1, 2) - a(0, 1) * cof(1, 2, 0, 2) + a(0, 2) * cof(1, 2, 0, 1);
    if det.abs() < T::lit(1e-12) {
        return None;
    }
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    Some(Matrix::from_fn(3, 3, |r, c| adj[r][c] / det))
}

impl<T: Real> LatentCodec<T> {
    pub fn new(seed: u64, latent_channels: usize) -> Result<Self> {
        ensure!(latent_channels >= 3, "the colour map needs at least 3 latent channels");
        let mut attempt = 0u64;
        loop {
            let map = Matrix::from_vec(latent_channels, 3, normal_vec(seed, &[CODEC_STREAM, attempt], latent_channels * 3))?;
            if let Some(inv) = invert3(&map.t_matmul(&map)) {
                let pinv = inv.matmul(&map.transpose());
                return Ok(Self { map, pinv });
            }
            attempt += 1;
        }
    }

    pub fn latent_channels(&self) -> usize {
        self.map.rows()
    }

    pub fn encode(&self, frame: &Grid<T>) -> Result<Grid<T>> {
        let (h, w, c) = frame.dims();
        ensure!(c == 3, "encoder expects RGB frames, got {c} channels");
        ensure!(h % 2 == 0 && w % 2 == 0, "frame size {w}x{h} must be divisible by 2");
        let (lh, lw) = (h / 2, w / 2);
        let d = self.latent_channels();
        let quarter = T::lit(0.25);
        let mut out = Grid::zeros(lh, lw, d);
        let mut rgb = [T::zero(); 3];
        for y in 0..lh {
            for x in 0..lw {
                for (ch, v) in rgb.iter_mut().enumerate() {
                    *v = quarter
                        * (frame.get(2 * y, 2 * x, ch)
                            + frame.get(2 * y, 2 * x + 1, ch)
                            + frame.get(2 * y + 1, 2 * x, ch)
                            + frame.get(2 * y + 1, 2 * x + 1, ch));
                }
                for (k, o) in out.pixel_mut(y, x).iter_mut().enumerate() {
                    *o = (0..3).map(|ch| self.map.get(k, ch) * rgb[ch]).sum();
                }
            }
        }
        Ok(out)
    }

    /// Decoded frames are not clamped.
    pub fn decode(&self, latent: &Grid<T>) -> Result<Grid<T>> {
        let (lh, lw, d) = latent.dims();
        ensure!(
            d == self.latent_channels(),
            "latent has {d} channels, codec expects {}",
            self.latent_channels()
        );
        let mut rgb = Grid::zeros(lh, lw, 3);
        for i in 0..lh * lw {
            let z = latent.cell(i);
            for (ch, o) in rgb.cell_mut(i).iter_mut().enumerate() {
                *o = (0..d).map(|k| self.pinv.get(ch, k) * z[k]).sum();
            }
        }
        Ok(upsample2(&rgb))
    }
}

/// Source coordinate and weights of output index `o` for a 2× half-pixel
/// upsample over `n` samples: `(o + 0.5)/2 − 0.5`, clamped to `[0, n−1]`.
fn upsample_taps<T: Real>(o: usize, n: usize) -> (usize, usize, T) {
    let s = ((o as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, T::lit(s - i0 as f64))
}

/// Bilinear 2× upsample with half-pixel centres and edge clamping.
pub fn upsample2<T: Real>(g: &Grid<T>) -> Grid<T> {
    let (h, w, c) = g.dims();
    let mut out = Grid::zeros(2 * h, 2 * w, c);
    for y in 0..2 * h {
        let (y0, y1, fy) = upsample_taps::<T>(y, h);
        for x in 0..2 * w {
            let (x0, x1, fx) = upsample_taps::<T>(x, w);
            let one = T::one();
            for ch in 0..c {
                let v = (one - fy) * ((one - fx) * g.get(y0, x0, ch) + fx * g.get(y0, x1, ch))
                    + fy * ((one - fx) * g.get(y1, x0, ch) + fx * g.get(y1, x1, ch));
                out.set(y, x, ch, v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_frame_round_trips() {
        let codec = LatentCodec::<f64>::new(3, 4).unwrap();
        let f = Grid::from_fn(6, 8, 3, |_, _, c| [0.2, 0.5, 0.9][c]);
        let back = codec.decode(&codec.encode(&f).unwrap()).unwrap();
        assert!(back.max_abs_diff(&f) < 1e-12);
    }

    #[test]
    fn odd_size_is_rejected() {
        let codec = LatentCodec::<f64>::new(3, 4).unwrap();
        assert!(codec.encode(&Grid::zeros(5, 4, 3)).is_err());
    }

    #[test]
    fn upsample_matches_half_pixel_weights() {
        let g = Grid::from_vec(1, 2, 1, vec![0.0, 4.0]).unwrap();
        let u = upsample2(&g);
        assert_eq!(u.data(), &[0.0, 1.0, 3.0, 4.0, 0.0, 1.0, 3.0, 4.0]);
    }
}
