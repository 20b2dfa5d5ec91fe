//! FRESCO-guided attention and the plain attentions it is compared against.
//!
//! All matrices are `(hw) × d` per frame, one row per token. The guided chain
//! is spatial-guided (`Q → Q′`), then efficient cross-frame (`Q′ → V′`), then
//! temporal-guided (`V′ → H`).

use rayon::prelude::*;

use crate::correspondence::TokenRef;
use crate::error::{ensure, Result};
use crate::scalar::Real;
use crate::tensor::{dot, Matrix};

/// Per-frame queries, keys and values, with optional reference queries and
/// keys taken from the unedited input.
#[derive(Clone, Debug, PartialEq)]
pub struct QkvSet<T> {
    pub q: Vec<Matrix<T>>,
    pub k: Vec<Matrix<T>>,
    pub v: Vec<Matrix<T>>,
    pub q_ref: Option<Vec<Matrix<T>>>,
    pub k_ref: Option<Vec<Matrix<T>>>,
}

fn same_shape<T: Real>(ms: &[Matrix<T>], rows: usize, cols: usize) -> bool {
    ms.iter().all(|m| m.rows() == rows && m.cols() == cols)
}

impl<T: Real> QkvSet<T> {
    pub fn new(q: Vec<Matrix<T>>, k: Vec<Matrix<T>>, v: Vec<Matrix<T>>) -> Result<Self> {
        ensure!(!q.is_empty(), "attention needs at least one frame");
        ensure!(q.len() == k.len() && q.len() == v.len(), "Q, K, V differ in frame count");
        let (n, d) = (q[0].rows(), q[0].cols());
        ensure!(d > 0, "query dimension must be positive");
        ensure!(same_shape(&q, n, d) && same_shape(&k, n, d), "Q and K must all be {n}x{d}");
        let dv = v[0].cols();
        ensure!(same_shape(&v, n, dv), "V must all have {n} rows and equal width");
        Ok(Self {
            q,
            k,
            v,
            q_ref: None,
            k_ref: None,
        })
    }

    pub fn with_reference(mut self, q_ref: Vec<Matrix<T>>, k_ref: Vec<Matrix<T>>) -> Result<Self> {
        let (n, d) = (self.tokens(), self.dim());
        ensure!(
            q_ref.len() == self.frames() && k_ref.len() == self.frames(),
            "reference Q/K frame count differs from Q"
        );
        ensure!(
            same_shape(&q_ref, n, d) && same_shape(&k_ref, n, d),
            "reference Q/K must be {n}x{d}"
        );
        self.q_ref = Some(q_ref);
        self.k_ref = Some(k_ref);
        Ok(self)
    }

    pub fn frames(&self) -> usize {
        self.q.len()
    }

    pub fn tokens(&self) -> usize {
        self.q[0].rows()
    }

    pub fn dim(&self) -> usize {
        self.q[0].cols()
    }

    fn references(&self) -> Result<(&[Matrix<T>], &[Matrix<T>])> {
        match (&self.q_ref, &self.k_ref) {
            (Some(q), Some(k)) => Ok((q, k)),
            _ => Err(crate::FrescoError::contract("spatial-guided attention needs reference Q and K")),
        }
    }

    fn sqrt_d(&self) -> T {
        T::from_usize_lossy(self.dim()).sqrt()
    }
}

/// Temperature scale factors and the editing-mode switch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttnConfig {
    pub lambda_s: f64,
    pub lambda_t: f64,
    /// Use `Q^r`/`K^r` in place of `Q`/`K` in the spatial-guided and
    /// cross-frame stages.
    pub editing_mode: bool,
}

impl Default for AttnConfig {
    fn default() -> Self {
        Self {
            lambda_s: 5.0,
            lambda_t: 5.0,
            editing_mode: false,
        }
    }
}

impl AttnConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.lambda_s > 0.0 && self.lambda_t > 0.0,
            "attention scale factors must be positive (λ_s={}, λ_t={})",
            self.lambda_s,
            self.lambda_t
        );
        Ok(())
    }
}

/// Softmax with the row maximum subtracted first.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut s = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// `Softmax(queries · keysᵀ / temperature)` as a dense matrix.
pub fn attention_weights<T: Real>(queries: &Matrix<T>, keys: &Matrix<T>, temperature: T) -> Matrix<T> {
    let mut w = queries.matmul_t(keys);
    for r in 0..w.rows() {
        let row = w.row_mut(r);
        row.iter_mut().for_each(|v| *v = *v / temperature);
        softmax_in_place(row);
    }
    w
}

/// `Softmax(queries · keysᵀ / temperature) · values`, one query row at a time.
pub fn attend<T: Real>(queries: &Matrix<T>, keys: &Matrix<T>, values: &Matrix<T>, temperature: T) -> Matrix<T> {
    assert_eq!(queries.cols(), keys.cols(), "query/key width");
    assert_eq!(keys.rows(), values.rows(), "key/value count");
    let dv = values.cols();
    let mut out = Matrix::zeros(queries.rows(), dv);
    let chunk = 16;
    out.data_mut()
        .par_chunks_mut(dv * chunk)
        .enumerate()
        .for_each(|(ci, block)| {
            let mut logits = vec![T::zero(); keys.rows()];
            for (j, orow) in block.chunks_mut(dv).enumerate() {
                let q = queries.row(ci * chunk + j);
                for (kr, l) in logits.iter_mut().enumerate() {
                    *l = dot(q, keys.row(kr)) / temperature;
                }
                softmax_in_place(&mut logits);
                for (kr, &w) in logits.iter().enumerate() {
                    for (o, &v) in orow.iter_mut().zip(values.row(kr)) {
                        *o += w * v;
                    }
                }
            }
        });
    out
}

/// Per-frame `Softmax(Q Kᵀ / √d) · V`.
pub fn self_attention_baseline<T: Real>(qkv: &QkvSet<T>) -> Vec<Matrix<T>> {
    let t = qkv.sqrt_d();
    (0..qkv.frames()).map(|i| attend(&qkv.q[i], &qkv.k[i], &qkv.v[i], t)).collect()
}

/// Per-frame `Softmax(queries_i Kᵀ / √d) · V` with queries other than `Q`.
pub fn self_attention_with_queries<T: Real>(queries: &[Matrix<T>], qkv: &QkvSet<T>) -> Result<Vec<Matrix<T>>> {
    ensure!(queries.len() == qkv.frames(), "one query matrix per frame required");
    let t = qkv.sqrt_d();
    Ok((0..qkv.frames()).map(|i| attend(&queries[i], &qkv.k[i], &qkv.v[i], t)).collect())
}

/// Weights `Softmax(Q^r_i K^rᵀ_i / (λ_s √d))` of frame `i`.
pub fn spatial_guided_weights<T: Real>(qkv: &QkvSet<T>, frame: usize, cfg: &AttnConfig) -> Result<Matrix<T>> {
    cfg.validate()?;
    let (qr, kr) = qkv.references()?;
    ensure!(frame < qkv.frames(), "frame {frame} out of range");
    Ok(attention_weights(&qr[frame], &kr[frame], T::lit(cfg.lambda_s) * qkv.sqrt_d()))
}

/// `Q′_i = Softmax(Q^r_i K^rᵀ_i / (λ_s √d)) · Q_i`; editing mode aggregates
/// `Q^r_i` instead of `Q_i`.
pub fn spatial_guided_attention<T: Real>(qkv: &QkvSet<T>, cfg: &AttnConfig) -> Result<Vec<Matrix<T>>> {
    cfg.validate()?;
    let (qr, kr) = qkv.references()?;
    let t = T::lit(cfg.lambda_s) * qkv.sqrt_d();
    let values = if cfg.editing_mode { qr } else { &qkv.q[..] };
    Ok((0..qkv.frames()).map(|i| attend(&qr[i], &kr[i], &values[i], t)).collect())
}

fn gather<T: Real>(ms: &[Matrix<T>], idx: &[TokenRef]) -> Matrix<T> {
    let cols = ms[0].cols();
    let mut data = Vec::with_capacity(idx.len() * cols);
    for r in idx {
        data.extend_from_slice(ms[r.frame].row(r.token));
    }
    Matrix::from_vec(idx.len(), cols, data).expect("gathered rows have uniform width")
}

fn check_index<T: Real>(qkv: &QkvSet<T>, idx: &[TokenRef]) -> Result<()> {
    let (f, n) = (qkv.frames(), qkv.tokens());
    ensure!(
        idx.iter().all(|r| r.frame < f && r.token < n),
        "token index outside the {f}-frame, {n}-token batch"
    );
    Ok(())
}

/// `V′_i = Softmax(Q′_i K[p_u]ᵀ / √d) · V[p_u]`; editing mode uses `K^r[p_u]`.
///
/// `p_u` is gathered in the order given (frame-major, row-major when built by
/// [`crate::correspondence::build_unique_index`]).
pub fn efficient_cross_frame_attention<T: Real>(
    q_prime: &[Matrix<T>],
    qkv: &QkvSet<T>,
    p_u: &[TokenRef],
    cfg: &AttnConfig,
) -> Result<Vec<Matrix<T>>> {
    cfg.validate()?;
    ensure!(!p_u.is_empty(), "unique-token index is empty");
    ensure!(q_prime.len() == qkv.frames(), "one Q′ matrix per frame required");
    ensure!(
        q_prime.iter().all(|m| m.cols() == qkv.dim()),
        "Q′ width differs from the key width {}",
        qkv.dim()
    );
    check_index(qkv, p_u)?;
    let keys = if cfg.editing_mode {
        gather(qkv.references()?.1, p_u)
    } else {
        gather(&qkv.k, p_u)
    };
    let values = gather(&qkv.v, p_u);
    let t = qkv.sqrt_d();
    Ok(q_prime.iter().map(|q| attend(q, &keys, &values, t)).collect())
}

/// Softmax attention of every frame's `queries` over all frames' keys and
/// values.
pub fn full_cross_frame_attention<T: Real>(queries: &[Matrix<T>], qkv: &QkvSet<T>) -> Result<Vec<Matrix<T>>> {
    let all: Vec<TokenRef> = (0..qkv.frames())
        .flat_map(|f| (0..qkv.tokens()).map(move |t| TokenRef::new(f, t)))
        .collect();
    efficient_cross_frame_attention(queries, qkv, &all, &AttnConfig::default())
}

/// Cross-frame attention over every token of every frame using `Q` as the
/// queries.
pub fn full_cross_frame_oracle<T: Real>(qkv: &QkvSet<T>) -> Vec<Matrix<T>> {
    full_cross_frame_attention(&qkv.q, qkv).expect("Q matches the set by construction")
}

/// `H[p_f] = Softmax(Q[p_f] K[p_f]ᵀ / (λ_t √d)) · V′[p_f]` for every chain,
/// scattered back to `(frame, token)`. Tokens not covered by any chain keep
/// their `V′` row.
pub fn temporal_guided_attention<T: Real>(
    qkv: &QkvSet<T>,
    v_prime: &[Matrix<T>],
    p_f: &[Vec<TokenRef>],
    cfg: &AttnConfig,
) -> Result<Vec<Matrix<T>>> {
    cfg.validate()?;
    ensure!(v_prime.len() == qkv.frames(), "one V′ matrix per frame required");
    ensure!(
        v_prime.iter().all(|m| m.rows() == qkv.tokens()),
        "V′ row count differs from the token count"
    );
    for c in p_f {
        check_index(qkv, c)?;
    }
    let t = T::lit(cfg.lambda_t) * qkv.sqrt_d();
    let outs: Vec<Matrix<T>> = p_f
        .par_iter()
        .map(|chain| {
            if chain.len() == 1 {
                return gather(v_prime, chain);
            }
            attend(&gather(&qkv.q, chain), &gather(&qkv.k, chain), &gather(v_prime, chain), t)
        })
        .collect();
    let mut h = v_prime.to_vec();
    for (chain, out) in p_f.iter().zip(&outs) {
        for (j, r) in chain.iter().enumerate() {
            h[r.frame].row_mut(r.token).copy_from_slice(out.row(j));
        }
    }
    Ok(h)
}

/// Which stages of the guided chain run; all off is plain self-attention.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GuidedStages {
    pub spatial: bool,
    pub cross_frame: bool,
    pub temporal: bool,
}

impl GuidedStages {
    pub const NONE: Self = Self {
        spatial: false,
        cross_frame: false,
        temporal: false,
    };
    pub const ALL: Self = Self {
        spatial: true,
        cross_frame: true,
        temporal: true,
    };

    pub fn any(&self) -> bool {
        self.spatial || self.cross_frame || self.temporal
    }
}

/// The chain spatial-guided → cross-frame → temporal-guided with disabled
/// stages replaced by their plain counterparts (`Q′ = Q`; per-frame
/// self-attention; `H = V′`).
pub fn guided_attention<T: Real>(
    qkv: &QkvSet<T>,
    p_u: &[TokenRef],
    p_f: &[Vec<TokenRef>],
    cfg: &AttnConfig,
    stages: GuidedStages,
) -> Result<Vec<Matrix<T>>> {
    if !stages.any() {
        return Ok(self_attention_baseline(qkv));
    }
    let q_prime = if stages.spatial {
        spatial_guided_attention(qkv, cfg)?
    } else {
        qkv.q.clone()
    };
    let v_prime = if stages.cross_frame {
        efficient_cross_frame_attention(&q_prime, qkv, p_u, cfg)?
    } else {
        self_attention_with_queries(&q_prime, qkv)?
    };
    if stages.temporal {
        temporal_guided_attention(qkv, &v_prime, p_f, cfg)
    } else {
        Ok(v_prime)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Matrix<f64> {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn spatial_hand_case() {
        let qkv = QkvSet::new(vec![col(&[10.0, 20.0])], vec![col(&[0.0, 0.0])], vec![col(&[0.0, 0.0])])
            .unwrap()
            .with_reference(vec![col(&[1.0, -1.0])], vec![col(&[1.0, -1.0])])
            .unwrap();
        let out = spatial_guided_attention(&qkv, &AttnConfig::default()).unwrap();
        let (a, b) = (0.2f64.exp(), (-0.2f64).exp());
        let w0 = a / (a + b);
        assert!((out[0].get(0, 0) - (w0 * 10.0 + (1.0 - w0) * 20.0)).abs() < 1e-12);
        assert!((out[0].get(1, 0) - ((1.0 - w0) * 10.0 + w0 * 20.0)).abs() < 1e-12);
    }

    #[test]
    fn missing_reference_is_rejected() {
        let qkv = QkvSet::new(vec![col(&[1.0])], vec![col(&[1.0])], vec![col(&[1.0])]).unwrap();
        assert!(spatial_guided_attention(&qkv, &AttnConfig::default()).is_err());
    }

    #[test]
    fn temporal_hand_case() {
        let qkv = QkvSet::new(
            vec![col(&[1.0]), col(&[0.0])],
            vec![col(&[1.0]), col(&[0.0])],
            vec![col(&[0.0]), col(&[0.0])],
        )
        .unwrap();
        let vp = vec![col(&[2.0]), col(&[4.0])];
        let chain = vec![vec![TokenRef::new(0, 0), TokenRef::new(1, 0)]];
        let h = temporal_guided_attention(&qkv, &vp, &chain, &AttnConfig::default()).unwrap();
        let w = 0.2f64.exp() / (0.2f64.exp() + 1.0);
        assert!((h[0].get(0, 0) - (w * 2.0 + (1.0 - w) * 4.0)).abs() < 1e-12);
        assert!((h[1].get(0, 0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn all_stages_off_is_self_attention() {
        let m = |s: f64| Matrix::from_fn(3, 2, |r, c| (r as f64 + 1.0) * s - c as f64);
        let qkv = QkvSet::new(vec![m(0.3)], vec![m(-0.2)], vec![m(1.0)]).unwrap();
        let a = guided_attention(&qkv, &[], &[], &AttnConfig::default(), GuidedStages::NONE).unwrap();
        assert_eq!(a, self_attention_baseline(&qkv));
    }
}
