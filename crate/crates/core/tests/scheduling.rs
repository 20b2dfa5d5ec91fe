mod common;

use common::*;
use fresco_core::media::{synthesize_scene, FrameSequence};
use fresco_core::scheduler::{
    batch_plan, cyclic_schedule, frame_distances, interpolate_nonkeyframes, propagate_tokens, select_keyframes,
    select_keyframes_from_distances,
};
use fresco_core::{Grid, Matrix};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn keyframe_gaps_stay_within_s_max(m in 2usize..=200, s_max in 1usize..=20, frac in 0.0f64..1.0,
                                       seed in 0u64..10_000, sparsity in 0.0f64..1.0) {
        let s_min = 1 + ((s_max - 1) as f64 * frac) as usize;
        let mut r = rng(seed);
        let d: Vec<f64> = (0..m)
            .map(|_| if r.random_bool(sparsity) { 0.0 } else { r.random_range(0.0..5.0) })
            .collect();
        let plan = select_keyframes_from_distances(&d, s_min, s_max).unwrap();
        let k = &plan.keyframes;
        prop_assert_eq!(k[0], 0);
        prop_assert_eq!(*k.last().unwrap(), m - 1);
        prop_assert!(k.windows(2).all(|p| p[0] < p[1] && p[1] - p[0] <= s_max));
        prop_assert!(plan.max_gap() <= s_max);
    }

    #[test]
    fn batches_cover_positions_with_two_anchor_overlap(count in 1usize..60, n in 3usize..10) {
        let plan = batch_plan(count, n).unwrap();
        let mut covered = vec![false; count];
        for b in &plan.batches {
            prop_assert!(b.len() <= n);
            for &p in b {
                covered[p] = true;
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
        for (k, pair) in plan.batches.windows(2).enumerate() {
            // Batch k+1 repeats position 0 and the last member of batch k.
            let shared: Vec<usize> = pair[1].iter().copied().filter(|p| pair[0].contains(p)).collect();
            prop_assert_eq!(&shared, &vec![0, *pair[0].last().unwrap()], "batches {} and {}", k, k + 1);
        }
    }

    #[test]
    fn cyclic_slots_visit_frames_evenly(frames in 3usize..16, frac in 0.0f64..1.0, anchors: bool) {
        let span = if anchors { frames - 2 } else { frames };
        let lo = if anchors { 1 } else { 2 };
        let n_key = lo + ((span - lo) as f64 * frac) as usize;
        let s = cyclic_schedule(frames, n_key, anchors).unwrap();
        let mut hits = vec![0usize; frames];
        for step in 0..s.cycle_length() {
            let keys = s.keyframes(step);
            if anchors {
                prop_assert!(keys.contains(&0) && keys.contains(&(frames - 1)));
            }
            for k in keys {
                hits[k] += 1;
            }
            prop_assert_eq!(s.keyframes(step + s.cycle_length()), s.keyframes(step));
        }
        let cycled: Vec<usize> = if anchors { hits[1..frames - 1].to_vec() } else { hits };
        prop_assert!(cycled.iter().all(|&h| h == cycled[0]), "uneven coverage {:?}", cycled);
    }
}

#[test]
fn batch_formula_and_truncation() {
    let plan = batch_plan(10, 8).unwrap();
    let one_based: Vec<Vec<usize>> = plan.batches.iter().map(|b| b.iter().map(|p| p + 1).collect()).collect();
    assert_eq!(one_based, vec![(1..=8).collect::<Vec<_>>(), vec![1, 8, 9, 10]]);
    assert!(batch_plan(10, 2).is_err());
}

#[test]
fn short_clip_keeps_its_ends() {
    let plan = select_keyframes_from_distances(&[0.0, 1.0, 2.0, 3.0, 4.0], 1, 10).unwrap();
    assert_eq!(plan.keyframes, vec![0, 4]);
}

#[test]
fn ties_break_to_smallest_index() {
    let scene = synthesize_scene::<f64>(&small_scene(12), 1).unwrap();
    let plan = select_keyframes(&scene.frames, 2, 4).unwrap();
    assert!(plan.max_gap() <= 4);
    let d = frame_distances(&scene.frames);
    assert_eq!(d.len(), 12);
    // Replay with flat distances: the smallest eligible index wins.
    let flat = select_keyframes_from_distances(&[1.0; 12], 2, 4).unwrap();
    assert_eq!(flat.keyframes[1], 2);
}

#[test]
fn propagated_tokens_follow_their_nearest_neighbours() {
    // Frame 1 holds frame 0's tokens in reverse order, frame 2 is frame 0.
    let src0 = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]).unwrap();
    let rev = Matrix::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
    let edit0 = Matrix::from_rows(&[vec![10.0, 0.0], vec![20.0, 0.0], vec![30.0, 0.0]]).unwrap();
    let edit2 = Matrix::from_rows(&[vec![11.0, 0.0], vec![21.0, 0.0], vec![31.0, 0.0]]).unwrap();
    let out = propagate_tokens(&[src0.clone(), rev, src0], &[edit0, edit2], &[0, 2]).unwrap();
    // Equal distances: the two edits are averaged, in matched order.
    let want: [f64; 3] = [30.5, 20.5, 10.5];
    for (p, w) in want.iter().enumerate() {
        assert!((out[1].get(p, 0) - w).abs() < 1e-12);
    }
}

#[test]
fn interpolation_copies_keyframes_and_warps_between() {
    let scene = synthesize_scene::<f64>(&small_scene(5), 3).unwrap();
    let corr = scene.correspondence();
    let plan = select_keyframes_from_distances(&[0.0; 5], 1, 4).unwrap();
    assert_eq!(plan.keyframes, vec![0, 4]);
    // "Edited" keyframes are the originals, so warped neighbours should
    // reproduce the middle frames wherever the flow is valid.
    let edited: Vec<Grid<f64>> = plan.keyframes.iter().map(|&k| scene.frames.frame(k).clone()).collect();
    let out: FrameSequence<f64> = interpolate_nonkeyframes(&scene.frames, &edited, &plan, &corr).unwrap();
    assert_eq!(out.frame(0), scene.frames.frame(0));
    assert_eq!(out.frame(4), scene.frames.frame(4));
    let (_, mask) = corr.between(0, 2).unwrap();
    let (_, mask_b) = corr.between(4, 2).unwrap();
    for idx in 0..32 * 32 {
        if mask.is_valid_at(idx) && mask_b.is_valid_at(idx) {
            for (a, b) in out.frame(2).cell(idx).iter().zip(scene.frames.frame(2).cell(idx)) {
                assert!((a - b).abs() < 1e-9, "pixel {idx}");
            }
        }
    }
}
