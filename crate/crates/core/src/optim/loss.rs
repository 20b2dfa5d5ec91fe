use rayon::prelude::*;

use super::{ConsistencyTargets, FeatureStack};
use crate::correspondence::{warp, warp_transpose, FlowField, OcclusionMask};
use crate::error::{ensure, Result};
use crate::scalar::Real;
use crate::tensor::{dot, Grid, Matrix};

fn check_temporal<T: Real>(f: &FeatureStack<T>, flows: &[FlowField<T>], masks: &[OcclusionMask]) -> Result<()> {
    ensure!(flows.len() == masks.len(), "flows and masks differ in count");
    if flows.is_empty() {
        return Ok(());
    }
    ensure!(
        flows.len() + 1 == f.len(),
        "{} frames need {} consecutive flows, got {}",
        f.len(),
        f.len().saturating_sub(1),
        flows.len()
    );
    let (_, h, w, _) = f.shape();
    for (fl, m) in flows.iter().zip(masks) {
        ensure!(
            fl.height() == h && fl.width() == w && m.height() == h && m.width() == w,
            "flow/mask grid does not match the {w}x{h} feature grid"
        );
    }
    Ok(())
}

fn check_reference<T: Real>(f: &FeatureStack<T>, r: &FeatureStack<T>) -> Result<()> {
    ensure!(
        f.shape() == r.shape(),
        "reference features {:?} do not match features {:?}",
        r.shape(),
        f.shape()
    );
    Ok(())
}

#[inline]
fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

/// Masked residuals `M ⊙ (f_{i+1} − warp(f_i))` for every consecutive pair;
/// samples falling off the grid warp to zero.
fn temporal_residuals<T: Real>(
    f: &FeatureStack<T>,
    flows: &[FlowField<T>],
    masks: &[OcclusionMask],
) -> Result<Vec<Grid<T>>> {
    flows
        .iter()
        .zip(masks)
        .enumerate()
        .map(|(i, (flow, mask))| {
            let warped = warp(f.frame(i), flow, T::zero())?;
            let mut r = f.frame(i + 1).zip_map(&warped, |a, b| a - b);
            for t in 0..r.cells() {
                if !mask.is_valid_at(t) {
                    r.cell_mut(t).iter_mut().for_each(|v| *v = T::zero());
                }
            }
            Ok(r)
        })
        .collect()
}

/// `Σ_i ‖M_i^{i+1} ⊙ (f_{i+1} − warp(f_i))‖₁`.
pub fn temporal_loss<T: Real>(f: &FeatureStack<T>, flows: &[FlowField<T>], masks: &[OcclusionMask]) -> Result<T> {
    check_temporal(f, flows, masks)?;
    let mut total = T::zero();
    for r in temporal_residuals(f, flows, masks)? {
        for &v in r.data() {
            total += v.abs();
        }
    }
    Ok(total)
}

/// Subgradient of [`temporal_loss`] with `sign(0) = 0`, back-propagated
/// through the bilinear warp.
pub fn temporal_loss_gradient<T: Real>(
    f: &FeatureStack<T>,
    flows: &[FlowField<T>],
    masks: &[OcclusionMask],
) -> Result<FeatureStack<T>> {
    check_temporal(f, flows, masks)?;
    let mut g = FeatureStack::zeros_like(f);
    for (i, r) in temporal_residuals(f, flows, masks)?.into_iter().enumerate() {
        let s = r.map(sign);
        for (gv, &sv) in g.frames_mut()[i + 1].data_mut().iter_mut().zip(s.data()) {
            *gv += sv;
        }
        let back = warp_transpose(&s, &flows[i])?;
        for (gv, &bv) in g.frames_mut()[i].data_mut().iter_mut().zip(back.data()) {
            *gv -= bv;
        }
    }
    Ok(g)
}

/// Rows scaled to unit length; zero rows stay zero. Also returns the norms.
pub(crate) fn normalize_rows<T: Real>(m: &Matrix<T>) -> (Matrix<T>, Vec<T>) {
    let mut out = m.clone();
    let mut norms = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let n = dot(row, row).sqrt();
        norms.push(n);
        if n > T::zero() {
            row.iter_mut().for_each(|v| *v = *v / n);
        } else {
            row.iter_mut().for_each(|v| *v = T::zero());
        }
    }
    (out, norms)
}

/// Number of exactly-zero token vectors; they normalise to zero and add a
/// cosine of 0 to the gram matrix.
pub fn count_zero_norm_tokens<T: Real>(f: &FeatureStack<T>) -> usize {
    f.frames()
        .iter()
        .map(|g| (0..g.cells()).filter(|&t| g.cell(t).iter().all(|&v| v == T::zero())).count())
        .sum()
}

/// `λ Σ_i ‖f̃_i f̃_iᵀ − f̃ʳ_i f̃ʳ_iᵀ‖²_F`, evaluated on the explicit
/// `(hw) × (hw)` gram matrices.
pub fn spatial_loss<T: Real>(f: &FeatureStack<T>, reference: &FeatureStack<T>, lambda: T) -> Result<T> {
    check_reference(f, reference)?;
    let per_frame: Vec<T> = f
        .frames()
        .par_iter()
        .zip(reference.frames().par_iter())
        .map(|(a, b)| {
            let (na, _) = normalize_rows(&a.to_matrix());
            let (nb, _) = normalize_rows(&b.to_matrix());
            let n = na.rows();
            let mut s = T::zero();
            for p in 0..n {
                for q in 0..n {
                    let d = dot(na.row(p), na.row(q)) - dot(nb.row(p), nb.row(q));
                    s += d * d;
                }
            }
            s
        })
        .collect();
    Ok(lambda * per_frame.into_iter().fold(T::zero(), |a, b| a + b))
}

/// Gradient of [`spatial_loss`].
///
/// With `D = ÑÑᵀ − RRᵀ`, `∂L/∂Ñ = 4λ D Ñ = 4λ (Ñ(ÑᵀÑ) − R(RᵀÑ))`, which only
/// needs `d × d` products. The normalisation is then undone per token:
/// `∂L/∂f_p = (g_p − ñ_p (ñ_p·g_p)) / ‖f_p‖`; zero tokens get zero gradient.
pub fn spatial_loss_gradient<T: Real>(
    f: &FeatureStack<T>,
    reference: &FeatureStack<T>,
    lambda: T,
) -> Result<FeatureStack<T>> {
    check_reference(f, reference)?;
    let scale = T::lit(4.0) * lambda;
    let frames: Vec<Grid<T>> = f
        .frames()
        .par_iter()
        .zip(reference.frames().par_iter())
        .map(|(a, b)| {
            let (na, norms) = normalize_rows(&a.to_matrix());
            let (nb, _) = normalize_rows(&b.to_matrix());
            let gram_a = na.t_matmul(&na);
            let cross = nb.t_matmul(&na);
            let ga = na.matmul(&gram_a);
            let gb = nb.matmul(&cross);
            let mut out = Matrix::zeros(na.rows(), na.cols());
            for p in 0..na.rows() {
                if norms[p] == T::zero() {
                    continue;
                }
                let n = na.row(p);
                let g: Vec<T> = ga.row(p).iter().zip(gb.row(p)).map(|(&x, &y)| scale * (x - y)).collect();
                let proj = dot(n, &g);
                for ((o, &gv), &nv) in out.row_mut(p).iter_mut().zip(&g).zip(n) {
                    *o = (gv - nv * proj) / norms[p];
                }
            }
            Grid::from_matrix(a.height(), a.width(), out).expect("shape preserved")
        })
        .collect();
    FeatureStack::new(frames)
}

/// `L_temp(f) + L_spat(f)` for the enabled terms.
pub fn total_loss<T: Real>(f: &FeatureStack<T>, targets: ConsistencyTargets<'_, T>, lambda_spat: T) -> Result<T> {
    let mut l = temporal_loss(f, targets.flows, targets.masks)?;
    if let Some(r) = targets.reference {
        l += spatial_loss(f, r, lambda_spat)?;
    }
    Ok(l)
}

/// Gradient of [`total_loss`] with respect to `f`.
pub fn loss_gradients<T: Real>(
    f: &FeatureStack<T>,
    targets: ConsistencyTargets<'_, T>,
    lambda_spat: T,
) -> Result<FeatureStack<T>> {
    let mut g = temporal_loss_gradient(f, targets.flows, targets.masks)?;
    if let Some(r) = targets.reference {
        if lambda_spat != T::zero() {
            let gs = spatial_loss_gradient(f, r, lambda_spat)?;
            for (a, b) in g.frames_mut().iter_mut().zip(gs.frames()) {
                for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
        }
    }
    Ok(g)
}
