use super::{FlowField, OcclusionMask};
use crate::error::{ensure, Result};
use crate::scalar::Real;
use crate::tensor::Grid;

/// Average-pool a pixel flow and mask onto a token grid `factor` times
/// coarser. Flow vectors are divided by `factor` (token units); a token is
/// valid iff strictly more than half of its pixels are valid.
pub fn downscale_to_tokens<T: Real>(
    flow: &FlowField<T>,
    mask: &OcclusionMask,
    factor: usize,
) -> Result<(FlowField<T>, OcclusionMask)> {
    ensure!(factor >= 1, "downscale factor must be at least 1");
    let (h, w) = (flow.height(), flow.width());
    ensure!(
        mask.height() == h && mask.width() == w,
        "mask and flow sizes differ"
    );
    ensure!(
        h % factor == 0 && w % factor == 0,
        "{w}x{h} is not divisible by downscale factor {factor}"
    );
    let (th, tw) = (h / factor, w / factor);
    let area = factor * factor;
    let norm = T::one() / (T::from_usize_lossy(area) * T::from_usize_lossy(factor));
    let mut vectors = Grid::zeros(th, tw, 2);
    let mut valid = vec![false; th * tw];
    for ty in 0..th {
        for tx in 0..tw {
            let (mut sx, mut sy) = (T::zero(), T::zero());
            let mut count = 0usize;
            for y in ty * factor..(ty + 1) * factor {
                for x in tx * factor..(tx + 1) * factor {
                    let (fx, fy) = flow.at(y, x);
                    sx += fx;
                    sy += fy;
                    count += mask.is_valid(y, x) as usize;
                }
            }
            vectors.set(ty, tx, 0, sx * norm);
            vectors.set(ty, tx, 1, sy * norm);
            valid[ty * tw + tx] = 2 * count > area;
        }
    }
    Ok((
        FlowField::new(flow.source(), flow.target(), vectors)?,
        OcclusionMask::new(mask.source(), mask.target(), th, tw, valid)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_flow_scales_down() {
        let f = FlowField::<f64>::uniform(0, 1, 8, 8, 4.0, -2.0);
        let (tf, tm) = downscale_to_tokens(&f, &OcclusionMask::all_valid(0, 1, 8, 8), 4).unwrap();
        assert_eq!((tf.height(), tf.width()), (2, 2));
        assert!(tf.vectors().data().chunks(2).all(|v| v == [1.0, -0.5]));
        assert_eq!(tm.valid_count(), 4);
    }

    #[test]
    fn half_valid_block_is_invalid() {
        let valid: Vec<bool> = (0..16).map(|i| (i % 4) < 2).collect();
        let m = OcclusionMask::new(0, 1, 4, 4, valid).unwrap();
        let (_, tm) = downscale_to_tokens(&FlowField::<f64>::zeros(0, 1, 4, 4), &m, 4).unwrap();
        assert!(!tm.is_valid(0, 0));
        let (_, tm2) = downscale_to_tokens(&FlowField::<f64>::zeros(0, 1, 4, 4), &m, 2).unwrap();
        assert_eq!(tm2.values(), &[true, false, true, false]);
    }

    #[test]
    fn indivisible_size_is_a_contract_error() {
        let f = FlowField::<f64>::zeros(0, 1, 6, 6);
        assert!(downscale_to_tokens(&f, &OcclusionMask::all_valid(0, 1, 6, 6), 4).is_err());
    }
}
