#![allow(dead_code)]

use fresco_core::correspondence::{FlowField, OcclusionMask};
use fresco_core::media::{SceneSpec, Sprite};
use fresco_core::optim::FeatureStack;
use fresco_core::{Grid, Matrix, Real};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(r: &mut impl Rng, h: usize, w: usize, c: usize) -> Grid<f64> {
    Grid::from_fn(h, w, c, |_, _, _| r.random_range(-1.0..1.0))
}

pub fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

pub fn random_stack(r: &mut impl Rng, n: usize, h: usize, w: usize, d: usize) -> FeatureStack<f64> {
    FeatureStack::new((0..n).map(|_| random_grid(r, h, w, d)).collect()).unwrap()
}

/// Fractional per-pixel flows for every pair `(i, i+1)`.
pub fn random_flows(r: &mut impl Rng, n: usize, h: usize, w: usize, reach: f64) -> Vec<FlowField<f64>> {
    (0..n.saturating_sub(1))
        .map(|i| FlowField::new(i, i + 1, Grid::from_fn(h, w, 2, |_, _, _| r.random_range(-reach..reach))).unwrap())
        .collect()
}

pub fn random_masks(r: &mut impl Rng, n: usize, h: usize, w: usize, p_valid: f64) -> Vec<OcclusionMask> {
    (0..n.saturating_sub(1))
        .map(|i| OcclusionMask::new(i, i + 1, h, w, (0..h * w).map(|_| r.random_bool(p_valid)).collect()).unwrap())
        .collect()
}

/// Softmax attention written out longhand: for every query row, logits over
/// the key rows, shifted by their maximum, exponentiated, normalised, and
/// used to average the value rows.
pub fn softmax_oracle(q: &Matrix<f64>, k: &Matrix<f64>, v: &Matrix<f64>, temperature: f64) -> Matrix<f64> {
    let mut out = Matrix::zeros(q.rows(), v.cols());
    for i in 0..q.rows() {
        let logits: Vec<f64> = (0..k.rows())
            .map(|j| (0..q.cols()).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / temperature)
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for c in 0..v.cols() {
            out.set(i, c, (0..k.rows()).map(|j| e[j] / z * v.get(j, c)).sum());
        }
    }
    out
}

/// Two textured sprites crossing a textured background, 64×64, 8 frames.
pub fn benchmark_scene() -> SceneSpec {
    SceneSpec {
        height: 64,
        width: 64,
        frames: 8,
        background_seed: 11,
        frame_rate: 8.0,
        sprites: vec![
            Sprite {
                texture_seed: 1,
                width: 22.0,
                height: 18.0,
                x: 6.0,
                y: 10.0,
                dx: 3.0,
                dy: 1.0,
            },
            Sprite {
                texture_seed: 2,
                width: 14.0,
                height: 14.0,
                x: 44.0,
                y: 40.0,
                dx: -2.0,
                dy: -1.0,
            },
        ],
    }
}

/// A small one-sprite scene for quick end-to-end runs.
pub fn small_scene(frames: usize) -> SceneSpec {
    SceneSpec {
        height: 32,
        width: 32,
        frames,
        background_seed: 5,
        frame_rate: 8.0,
        sprites: vec![Sprite {
            texture_seed: 1,
            width: 10.0,
            height: 8.0,
            x: 4.0,
            y: 6.0,
            dx: 2.0,
            dy: 1.0,
        }],
    }
}

pub fn max_abs_diff<T: Real>(a: &[Grid<T>], b: &[Grid<T>]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.max_abs_diff(y).to_f64().unwrap())
        .fold(0.0, f64::max)
}
