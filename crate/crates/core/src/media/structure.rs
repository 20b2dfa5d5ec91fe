use crate::scalar::Real;
use crate::tensor::Grid;

/// Single-channel edge-strength map in `[0, 1]`, same size as its frame.
pub type StructureMap<T> = Grid<T>;

/// Rec. 601 luma: `0.299 R + 0.587 G + 0.114 B`.
pub fn luminance<T: Real>(frame: &Grid<T>) -> Grid<T> {
    let (wr, wg, wb) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
    Grid::from_fn(frame.height(), frame.width(), 1, |y, x, _| {
        let p = frame.pixel(y, x);
        wr * p[0] + wg * p[1] + wb * p[2]
    })
}

/// Sobel gradient magnitude of the luminance (replicated borders), divided by
/// its maximum. A flat frame maps to all zeros.
pub fn extract_structure<T: Real>(frame: &Grid<T>) -> StructureMap<T> {
    let lum = luminance(frame);
    let (h, w) = (lum.height(), lum.width());
    let at = |y: isize, x: isize| {
        let yc = y.clamp(0, h as isize - 1) as usize;
        let xc = x.clamp(0, w as isize - 1) as usize;
        lum.get(yc, xc, 0)
    };
    let two = T::lit(2.0);
    let mut mag = Grid::from_fn(h, w, 1, |y, x, _| {
        let (y, x) = (y as isize, x as isize);
        let gx = (at(y - 1, x + 1) + two * at(y, x + 1) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + two * at(y, x - 1) + at(y + 1, x - 1));
        let gy = (at(y + 1, x - 1) + two * at(y + 1, x) + at(y + 1, x + 1))
            - (at(y - 1, x - 1) + two * at(y - 1, x) + at(y - 1, x + 1));
        (gx * gx + gy * gy).sqrt()
    });
    let max = mag.data().iter().fold(T::zero(), |m, &v| m.max(v));
    if max > T::zero() {
        mag.data_mut().iter_mut().for_each(|v| *v = *v / max);
    }
    mag
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_frame_has_no_edges() {
        let f = Grid::<f64>::filled(5, 7, 3, 0.4);
        assert!(extract_structure(&f).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_peaks_on_edge_columns() {
        let f = Grid::<f64>::from_fn(6, 8, 3, |_, x, _| if x >= 4 { 1.0 } else { 0.0 });
        let s = extract_structure(&f);
        for y in 0..6 {
            assert_eq!(s.get(y, 3, 0), 1.0);
            assert_eq!(s.get(y, 4, 0), 1.0);
            assert_eq!(s.get(y, 0, 0), 0.0);
            assert_eq!(s.get(y, 7, 0), 0.0);
        }
    }
}
