use super::FlowField;
use crate::error::{ensure, Result};
use crate::scalar::Real;
use crate::tensor::{bilinear_taps, Grid};

/// Backward warp: `out(p)` is the bilinear sample of `field` at
/// `p + flow(p)`, or `fill` in every channel when that point is off the grid.
pub fn warp<T: Real>(field: &Grid<T>, flow: &FlowField<T>, fill: T) -> Result<Grid<T>> {
    warp_grid(field, flow.vectors(), fill)
}

/// [`warp`] with the flow given as a raw two-channel grid.
pub fn warp_grid<T: Real>(field: &Grid<T>, flow: &Grid<T>, fill: T) -> Result<Grid<T>> {
    ensure!(
        field.height() == flow.height() && field.width() == flow.width(),
        "flow grid {}x{} does not match field {}x{}",
        flow.width(),
        flow.height(),
        field.width(),
        field.height()
    );
    let (h, w, c) = field.dims();
    let mut out = Grid::filled(h, w, c, fill);
    for y in 0..h {
        for x in 0..w {
            let v = flow.pixel(y, x);
            let px = T::from_usize_lossy(x) + v[0];
            let py = T::from_usize_lossy(y) + v[1];
            field.sample_bilinear(px, py, out.pixel_mut(y, x));
        }
    }
    Ok(out)
}

/// Adjoint of [`warp`] with respect to the field: scatters `grad_out` back
/// onto the source grid with the bilinear weights. Off-grid samples (which
/// produced `fill`) contribute nothing.
pub fn warp_transpose<T: Real>(grad_out: &Grid<T>, flow: &FlowField<T>) -> Result<Grid<T>> {
    ensure!(
        grad_out.height() == flow.height() && grad_out.width() == flow.width(),
        "flow grid does not match gradient grid"
    );
    let (h, w, c) = grad_out.dims();
    let mut out = Grid::zeros(h, w, c);
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = flow.at(y, x);
            let Some(taps) = bilinear_taps(T::from_usize_lossy(x) + fx, T::from_usize_lossy(y) + fy, w, h) else {
                continue;
            };
            let g = grad_out.pixel(y, x);
            for (idx, wt) in taps {
                if wt == T::zero() {
                    continue;
                }
                for (o, &gv) in out.cell_mut(idx).iter_mut().zip(g) {
                    *o += wt * gv;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::dot;

    #[test]
    fn zero_flow_is_identity() {
        let f = Grid::<f64>::from_fn(3, 4, 2, |y, x, c| (y * 8 + x * 2 + c) as f64);
        let out = warp(&f, &FlowField::zeros(0, 1, 3, 4), -1.0).unwrap();
        assert_eq!(out.max_abs_diff(&f), 0.0);
    }

    #[test]
    fn integer_shift_fills_last_column() {
        let f = Grid::<f64>::from_fn(2, 3, 1, |y, x, _| (10 * y + x) as f64);
        let out = warp(&f, &FlowField::uniform(0, 1, 2, 3, 1.0, 0.0), -7.0).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, -7.0, 11.0, 12.0, -7.0]);
    }

    #[test]
    fn half_pixel_shift_averages_neighbours() {
        let f = Grid::<f64>::from_vec(1, 2, 1, vec![3.0, 8.0]).unwrap();
        let out = warp(&f, &FlowField::uniform(0, 1, 1, 2, 0.5, 0.0), 0.0).unwrap();
        assert_eq!(out.get(0, 0, 0), (3.0 + 8.0) / 2.0);
        assert_eq!(out.get(0, 1, 0), 0.0);
    }

    #[test]
    fn transpose_is_adjoint() {
        let f = Grid::<f64>::from_fn(5, 6, 2, |y, x, c| ((y * 13 + x * 7 + c * 3) % 11) as f64 - 5.0);
        let g = Grid::<f64>::from_fn(5, 6, 2, |y, x, c| ((y * 5 + x * 11 + c) % 7) as f64 - 3.0);
        let flow = FlowField::new(
            0,
            1,
            Grid::from_fn(5, 6, 2, |y, x, c| ((y + 2 * x + c) % 5) as f64 * 0.37 - 0.8),
        )
        .unwrap();
        let lhs = dot(warp(&f, &flow, 0.0).unwrap().data(), g.data());
        let rhs = dot(f.data(), warp_transpose(&g, &flow).unwrap().data());
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
