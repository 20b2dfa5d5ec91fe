mod common;

use std::collections::HashSet;

use common::*;
use fresco_core::correspondence::{
    build_flow_chains, build_unique_index, estimate_flow, load_correspondence, save_correspondence, warp,
    ClipCorrespondence, FlowConfig, FlowField, OcclusionMask, TokenLayout, TokenRef,
};
use fresco_core::media::synthesize_scene;
use fresco_core::Grid;
use proptest::prelude::*;

/// Exhaustive SSD search per tile, written independently: collect every
/// admissible displacement with its cost and take the lexicographic minimum
/// of (cost, |d|², d_y, d_x).
fn block_match_oracle(src: &Grid<f64>, tgt: &Grid<f64>, block: usize, radius: i64) -> Grid<f64> {
    let (h, w, c) = tgt.dims();
    let mut out = Grid::zeros(h, w, 2);
    for ty in (0..h).step_by(block) {
        for tx in (0..w).step_by(block) {
            let (ey, ex) = ((ty + block).min(h), (tx + block).min(w));
            let mut cands = Vec::new();
            for dy in -radius..=radius {
                for dx in -radius..=radius {
                    let inside = |y: usize, x: usize| {
                        let (sy, sx) = (y as i64 + dy, x as i64 + dx);
                        sy >= 0 && sx >= 0 && sy < h as i64 && sx < w as i64
                    };
                    if !(inside(ty, tx) && inside(ey - 1, ex - 1)) {
                        continue;
                    }
                    let mut ssd = 0.0;
                    for y in ty..ey {
                        for x in tx..ex {
                            for ch in 0..c {
                                let e = tgt.get(y, x, ch)
                                    - src.get((y as i64 + dy) as usize, (x as i64 + dx) as usize, ch);
                                ssd += e * e;
                            }
                        }
                    }
                    cands.push((ssd, dx * dx + dy * dy, dy, dx));
                }
            }
            cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let (_, _, dy, dx) = cands[0];
            for y in ty..ey {
                for x in tx..ex {
                    out.set(y, x, 0, dx as f64);
                    out.set(y, x, 1, dy as f64);
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn block_matching_matches_brute_force(seed in 0u64..10_000, h in 3usize..12, w in 3usize..12,
                                           block in 1usize..6, radius in 0usize..4) {
        let mut r = rng(seed);
        let src = random_grid(&mut r, h, w, 2);
        let tgt = random_grid(&mut r, h, w, 2);
        let cfg = FlowConfig { block, radius };
        let got = estimate_flow(&src, &tgt, cfg).unwrap();
        prop_assert_eq!(got, block_match_oracle(&src, &tgt, block, radius as i64));
    }

    #[test]
    fn shifted_texture_is_recovered(seed in 0u64..10_000, dx in -2i64..=2, dy in -2i64..=2) {
        let mut r = rng(seed);
        let base = random_grid(&mut r, 24, 24, 3);
        // target(p) = base(p + d), so the backward flow is d wherever the
        // tile stays inside the source.
        let tgt = Grid::from_fn(24, 24, 3, |y, x, c| {
            let (sy, sx) = ((y as i64 + dy).clamp(0, 23) as usize, (x as i64 + dx).clamp(0, 23) as usize);
            base.get(sy, sx, c)
        });
        let flow = estimate_flow(&base, &tgt, FlowConfig { block: 8, radius: 3 }).unwrap();
        prop_assert_eq!(flow.get(12, 12, 0), dx as f64);
        prop_assert_eq!(flow.get(12, 12, 1), dy as f64);
    }

    #[test]
    fn unique_index_matches_set_builder(seed in 0u64..10_000, n in 1usize..6, h in 1usize..6, w in 1usize..6) {
        let mut r = rng(seed);
        let masks = random_masks(&mut r, n, h, w, 0.5);
        let got = build_unique_index(TokenLayout { frames: n, height: h, width: w }, &masks).unwrap();
        let mut want: Vec<TokenRef> = Vec::new();
        for f in 0..n {
            for y in 0..h {
                for x in 0..w {
                    if f == 0 || !masks[f - 1].is_valid(y, x) {
                        want.push(TokenRef::new(f, y * w + x));
                    }
                }
            }
        }
        prop_assert_eq!(got, want);
    }

    #[test]
    fn flow_chains_partition_the_tokens(seed in 0u64..10_000, n in 1usize..6, h in 1usize..7, w in 1usize..7,
                                        p_valid in 0.0f64..1.0, reach in 0.0f64..4.0) {
        let mut r = rng(seed);
        let flows = random_flows(&mut r, n, h, w, reach.max(1e-3));
        let masks = random_masks(&mut r, n, h, w, p_valid);
        let chains = build_flow_chains(TokenLayout { frames: n, height: h, width: w }, &flows, &masks).unwrap();
        let mut seen = HashSet::new();
        for c in &chains {
            prop_assert!(!c.is_empty());
            for t in c {
                prop_assert!(seen.insert(*t), "token {:?} in two chains", t);
            }
            prop_assert!(c.windows(2).all(|p| p[1].frame == p[0].frame + 1));
            // Links only cross valid tokens of the later frame.
            prop_assert!(c[1..].iter().all(|t| masks[t.frame - 1].is_valid_at(t.token)));
        }
        prop_assert_eq!(seen.len(), n * h * w);
    }
}

#[test]
fn half_pixel_flow_interpolates() {
    let field = Grid::from_vec(1, 2, 1, vec![2.0, 6.0]).unwrap();
    let flow = FlowField::uniform(0, 1, 1, 2, 0.5, 0.0);
    let out = warp(&field, &flow, 0.0).unwrap();
    assert_eq!(out.get(0, 0, 0), 4.0);
}

#[test]
fn ground_truth_round_trips_through_files() {
    let scene = synthesize_scene::<f64>(&small_scene(4), 2).unwrap();
    let corr = scene.correspondence();
    let dir = tempfile::tempdir().unwrap();
    save_correspondence(&corr, dir.path()).unwrap();
    let back: ClipCorrespondence<f64> = load_correspondence(dir.path(), 4).unwrap();
    // Ground-truth flows are small multiples of 1/2, exact in f32.
    assert_eq!(back.forward, corr.forward);
    assert_eq!(back.forward_masks, corr.forward_masks);
    assert_eq!(back.backward, corr.backward);
    assert_eq!(back.backward_masks, corr.backward_masks);
    assert!(load_correspondence::<f64>(dir.path(), 6).is_err());
}

#[test]
fn chained_translation_composes() {
    let (h, w) = (6, 8);
    let n = 4;
    let c = ClipCorrespondence {
        forward: (0..n - 1).map(|i| FlowField::uniform(i, i + 1, h, w, -1.0, 0.0)).collect(),
        forward_masks: (0..n - 1).map(|i| OcclusionMask::all_valid(i, i + 1, h, w)).collect(),
        backward: (0..n - 1).map(|i| FlowField::uniform(i + 1, i, h, w, 1.0, 0.0)).collect(),
        backward_masks: (0..n - 1).map(|i| OcclusionMask::all_valid(i + 1, i, h, w)).collect(),
    };
    let (flow, mask) = c.between(0, 3).unwrap();
    assert_eq!(flow.at(2, 5), (-3.0, 0.0));
    assert!(mask.is_valid(2, 5));
    // Traces that leave the grid are invalid.
    assert!(!mask.is_valid(2, 1));
    let (back, _) = c.between(3, 1).unwrap();
    assert_eq!(back.at(0, 0), (2.0, 0.0));
}
