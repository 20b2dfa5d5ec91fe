//! Dense row-major containers: spatial [`Grid`]s and 2-D [`Matrix`]es.
//!
//! A grid of `h × w` cells with `c` channels has exactly the memory layout of
//! an `(h·w) × c` matrix, so token features move between the two without
//! copying.

use crate::error::{ensure, Result};
use crate::scalar::Real;

/// `height × width × channels` array, channels fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Real> Grid<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        ensure!(
            data.len() == height * width * channels,
            "grid data length {} does not match {}x{}x{}",
            data.len(),
            height,
            width,
            channels
        );
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of spatial cells (`height · width`).
    #[inline]
    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims() == other.dims()
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Channel vector of cell `(y, x)`.
    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let o = (y * self.width + x) * self.channels;
        &self.data[o..o + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [T] {
        let o = (y * self.width + x) * self.channels;
        &mut self.data[o..o + self.channels]
    }

    /// Channel vector of flat cell index `i = y·width + x`.
    #[inline]
    pub fn cell(&self, i: usize) -> &[T] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    #[inline]
    pub fn cell_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        debug_assert!(self.same_shape(other));
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64_lossy()).unwrap_or_else(U::nan))
                .collect(),
        }
    }

    /// Reinterpret as a `(height·width) × channels` matrix.
    pub fn into_matrix(self) -> Matrix<T> {
        Matrix {
            rows: self.height * self.width,
            cols: self.channels,
            data: self.data,
        }
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        self.clone().into_matrix()
    }

    pub fn from_matrix(height: usize, width: usize, m: Matrix<T>) -> Result<Self> {
        ensure!(
            m.rows == height * width,
            "matrix with {} rows cannot form a {}x{} grid",
            m.rows,
            height,
            width
        );
        Ok(Self {
            height,
            width,
            channels: m.cols,
            data: m.data,
        })
    }

    /// Bilinear sample of all channels at continuous position `(x, y)`
    /// (pixel centers at integer coordinates). Returns `false` and leaves
    /// `out` untouched when the point is outside the grid.
    pub fn sample_bilinear(&self, x: T, y: T, out: &mut [T]) -> bool {
        let Some(taps) = bilinear_taps(x, y, self.width, self.height) else {
            return false;
        };
        out.iter_mut().for_each(|o| *o = T::zero());
        for (idx, w) in taps {
            if w == T::zero() {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(self.cell(idx)) {
                *o += w * v;
            }
        }
        true
    }
}

/// The four bilinear taps `(flat cell index, weight)` of point `(x, y)` on a
/// `width × height` grid, or `None` if the point lies outside
/// `[0, width−1] × [0, height−1]`. Taps that fall past the last row/column
/// carry zero weight and are clamped onto it.
#[inline]
pub fn bilinear_taps<T: Real>(x: T, y: T, width: usize, height: usize) -> Option<[(usize, T); 4]> {
    if !(x.is_finite() && y.is_finite()) || width == 0 || height == 0 {
        return None;
    }
    let xmax = T::from_usize_lossy(width - 1);
    let ymax = T::from_usize_lossy(height - 1);
    if x < T::zero() || y < T::zero() || x > xmax || y > ymax {
        return None;
    }
    let x0f = x.floor();
    let y0f = y.floor();
    let fx = x - x0f;
    let fy = y - y0f;
    let x0 = x0f.to_usize().unwrap_or(0);
    let y0 = y0f.to_usize().unwrap_or(0);
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let one = T::one();
    Some([
        (y0 * width + x0, (one - fx) * (one - fy)),
        (y0 * width + x1, fx * (one - fy)),
        (y1 * width + x0, (one - fx) * fy),
        (y1 * width + x1, fx * fy),
    ])
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        ensure!(
            data.len() == rows * cols,
            "matrix data length {} does not match {}x{}",
            data.len(),
            rows,
            cols
        );
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        ensure!(rows.iter().all(|r| r.len() == cols), "ragged matrix rows");
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let orow = &mut out.data[r * other.cols..(r + 1) * other.cols];
            for (k, &a) in self.row(r).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in orow.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_t(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let mut out = Self::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let a = self.row(r);
            for c in 0..other.rows {
                out.data[r * other.rows + c] = dot(a, other.row(c));
            }
        }
        out
    }

    /// `selfᵀ · other`.
    pub fn t_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b = other.row(k);
            for (i, &a) in self.row(k).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &bv) in orow.iter_mut().zip(b) {
                    *o += a * bv;
                }
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    /// Select rows by index, in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_taps_boundaries() {
        assert!(bilinear_taps(-0.1f64, 0.0, 4, 4).is_none());
        assert!(bilinear_taps(3.0f64, 3.0, 4, 4).is_some());
        assert!(bilinear_taps(3.0001f64, 0.0, 4, 4).is_none());
        let taps = bilinear_taps(0.5f64, 0.0, 2, 1).unwrap();
        let w: f64 = taps.iter().map(|t| t.1).sum();
        assert!((w - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64 - 1.5);
        let b = Matrix::from_fn(4, 2, |r, c| (r as f64) * 0.5 - c as f64);
        let direct = a.matmul(&b.transpose());
        assert_eq!(direct, a.matmul_t(&b));
        let tm = a.t_matmul(&a);
        assert!(tm.max_abs_diff(&a.transpose().matmul(&a)) < 1e-14);
    }

    #[test]
    fn grid_matrix_roundtrip_is_free() {
        let g = Grid::from_fn(2, 3, 4, |y, x, c| (y * 100 + x * 10 + c) as f32);
        let m = g.to_matrix();
        assert_eq!(m.rows(), 6);
        assert_eq!(m.row(4), g.pixel(1, 1));
        assert_eq!(Grid::from_matrix(2, 3, m).unwrap(), g);
    }
}
