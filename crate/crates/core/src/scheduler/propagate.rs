use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::optim::normalize_rows;
use crate::scalar::Real;
use crate::tensor::{dot, Matrix};

/// Nearest keyframes before and after frame `i` in the sorted `keys`
/// (either may be missing at the clip ends). A keyframe is its own match.
pub fn neighbouring_keyframes(keys: &[usize], i: usize) -> (Option<usize>, Option<usize>) {
    match keys.binary_search(&i) {
        Ok(_) => (Some(i), Some(i)),
        Err(pos) => (pos.checked_sub(1).map(|p| keys[p]), keys.get(pos).copied()),
    }
}

/// For each row of `query`, the row of `pool` with the highest cosine
/// similarity (first one on ties). Zero rows have similarity 0 to everything.
pub fn nearest_tokens<T: Real>(query: &Matrix<T>, pool: &Matrix<T>) -> Vec<usize> {
    let (nq, _) = normalize_rows(query);
    let (np, _) = normalize_rows(pool);
    (0..nq.rows())
        .map(|p| {
            let mut best = 0;
            let mut best_sim = T::neg_infinity();
            for q in 0..np.rows() {
                let s = dot(nq.row(p), np.row(q));
                if s > best_sim {
                    best_sim = s;
                    best = q;
                }
            }
            best
        })
        .collect()
}

/// Carry edited keyframe tokens over to every other frame.
///
/// `source[i]` are the unedited features of frame `i` (tokens × d), `keys`
/// the sorted keyframe indices and `edited[j]` the edited tokens of
/// `keys[j]`. A non-keyframe token takes its cosine nearest neighbour in each
/// of the two temporally closest keyframes and blends their edited tokens
/// with weights proportional to the inverse frame distance. At the clip ends
/// only one side exists. Keyframes return their edited tokens.
pub fn propagate_tokens<T: Real>(source: &[Matrix<T>], edited: &[Matrix<T>], keys: &[usize]) -> Result<Vec<Matrix<T>>> {
    ensure!(!keys.is_empty(), "token propagation needs at least one keyframe");
    ensure!(edited.len() == keys.len(), "one edited token set per keyframe required");
    ensure!(keys.windows(2).all(|w| w[0] < w[1]), "keyframes must be strictly ascending");
    ensure!(
        keys.last().is_some_and(|&k| k < source.len()),
        "keyframe index beyond the {} frames",
        source.len()
    );
    let (n, d) = (source[0].rows(), source[0].cols());
    ensure!(
        source.iter().chain(edited).all(|m| m.rows() == n && m.cols() == d),
        "all token sets must be {n}x{d}"
    );
    (0..source.len())
        .into_par_iter()
        .map(|i| {
            let (before, after) = neighbouring_keyframes(keys, i);
            let slot = |k: usize| keys.binary_search(&k).expect("keyframe present");
            if before == Some(i) {
                return Ok(edited[slot(i)].clone());
            }
            let sides: Vec<(usize, T)> = [before, after]
                .into_iter()
                .flatten()
                .map(|k| (k, T::one() / T::from_usize_lossy(k.abs_diff(i))))
                .collect();
            let total = sides.iter().fold(T::zero(), |a, &(_, w)| a + w);
            let mut out = Matrix::zeros(n, d);
            for (k, w) in sides {
                let w = w / total;
                let nn = nearest_tokens(&source[i], &source[k]);
                let e = &edited[slot(k)];
                for (p, &q) in nn.iter().enumerate() {
                    for (o, &v) in out.row_mut(p).iter_mut().zip(e.row(q)) {
                        *o += w * v;
                    }
                }
            }
            Ok(out)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbours_at_the_ends() {
        assert_eq!(neighbouring_keyframes(&[0, 4], 2), (Some(0), Some(4)));
        assert_eq!(neighbouring_keyframes(&[2, 4], 0), (None, Some(2)));
        assert_eq!(neighbouring_keyframes(&[2, 4], 6), (Some(4), None));
        assert_eq!(neighbouring_keyframes(&[2, 4], 4), (Some(4), Some(4)));
    }

    #[test]
    fn copy_of_a_keyframe_gets_its_edit() {
        let src = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let edit = Matrix::from_rows(&[vec![5.0, 1.0], vec![2.0, 7.0], vec![3.0, 3.0]]).unwrap();
        let out = propagate_tokens(&[src.clone(), src], &[edit.clone()], &[0]).unwrap();
        assert_eq!(out[1], edit);
    }
}
