use super::{FlowField, OcclusionMask};
use crate::error::{ensure, Result};
use crate::scalar::Real;

/// Forward-backward consistency check. `fwd` is the flow `i → j` (on `j`'s
/// grid) and `bwd` the flow `j → i` (on `i`'s grid). Pixel `p` of frame `j`
/// is valid iff `bwd` sampled bilinearly at `p + fwd(p)` lies on the canvas
/// and
///
/// ```text
/// |fwd(p) + bwd(q)|² ≤ 0.01 · (|fwd(p)|² + |bwd(q)|²) + 0.5
/// ```
pub fn occlusion_mask<T: Real>(fwd: &FlowField<T>, bwd: &FlowField<T>) -> Result<OcclusionMask> {
    ensure!(
        fwd.vectors().same_shape(bwd.vectors()),
        "forward and backward flows differ in size"
    );
    ensure!(
        fwd.source() == bwd.target() && fwd.target() == bwd.source(),
        "flows {}→{} and {}→{} are not a forward/backward pair",
        fwd.source(),
        fwd.target(),
        bwd.source(),
        bwd.target()
    );
    let (h, w) = (fwd.height(), fwd.width());
    let (rel, abs) = (T::lit(0.01), T::lit(0.5));
    let mut valid = vec![false; h * w];
    let mut back = [T::zero(); 2];
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = fwd.at(y, x);
            let qx = T::from_usize_lossy(x) + fx;
            let qy = T::from_usize_lossy(y) + fy;
            if !bwd.vectors().sample_bilinear(qx, qy, &mut back) {
                continue;
            }
            let (rx, ry) = (fx + back[0], fy + back[1]);
            let lhs = rx * rx + ry * ry;
            let rhs = rel * (fx * fx + fy * fy + back[0] * back[0] + back[1] * back[1]) + abs;
            valid[y * w + x] = lhs <= rhs;
        }
    }
    OcclusionMask::new(fwd.source(), fwd.target(), h, w, valid)
}
