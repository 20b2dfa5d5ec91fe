mod common;

use common::*;
use fresco_core::correspondence::OcclusionMask;
use fresco_core::ftns::Tensor;
use fresco_core::media::{load_frames, save_frames, save_frames_ftns, synthesize_scene, SceneSpec, Sprite};
use fresco_core::metrics::{evaluate, pixel_mse, pixel_mse_pairs};
use proptest::prelude::*;

#[test]
fn ftns_bytes_follow_the_layout() {
    let t = Tensor::new(vec![2, 3], vec![0.0, 1.5, -2.0, 3.25, 1e-3, f32::MAX]).unwrap();
    let mut want = b"FTNS".to_vec();
    want.extend(1u32.to_le_bytes());
    want.extend(2u32.to_le_bytes());
    want.extend(2u64.to_le_bytes());
    want.extend(3u64.to_le_bytes());
    for v in [0.0f32, 1.5, -2.0, 3.25, 1e-3, f32::MAX] {
        want.extend(v.to_le_bytes());
    }
    assert_eq!(t.to_bytes(), want);
    assert_eq!(Tensor::from_bytes(&want).unwrap(), t);
}

#[test]
fn frames_round_trip_through_ppm_and_ftns() {
    let scene = synthesize_scene::<f64>(&small_scene(3), 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_frames(&scene.frames, &dir.path().join("ppm")).unwrap();
    let back = load_frames::<f64>(&dir.path().join("ppm")).unwrap();
    assert!(max_abs_diff(back.frames(), scene.frames.frames()) <= 0.5 / 255.0 + 1e-12);
    // Already quantised frames survive a second round exactly.
    save_frames(&back, &dir.path().join("again")).unwrap();
    assert_eq!(load_frames::<f64>(&dir.path().join("again")).unwrap().frames(), back.frames());

    save_frames_ftns(&back, &dir.path().join("ftns")).unwrap();
    let t = load_frames::<f64>(&dir.path().join("ftns")).unwrap();
    assert!(max_abs_diff(t.frames(), back.frames()) <= 1e-7);
}

#[test]
fn missing_input_is_an_io_error() {
    let err = load_frames::<f64>(std::path::Path::new("/nonexistent/frames")).unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

fn sprite() -> impl Strategy<Value = Sprite> {
    (0u64..100, 2.0f64..12.0, 2.0f64..12.0, -4.0f64..30.0, -4.0f64..30.0, -3i32..=3, -3i32..=3).prop_map(
        |(texture_seed, width, height, x, y, dx, dy)| Sprite {
            texture_seed,
            width: width.round(),
            height: height.round(),
            x: x.round(),
            y: y.round(),
            dx: dx as f64,
            dy: dy as f64,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scene_text_round_trips(sprites in prop::collection::vec(sprite(), 0..4), frames in 2usize..10,
                              bg in 0u64..1000) {
        let spec = SceneSpec { height: 16, width: 24, frames, background_seed: bg, frame_rate: 12.0, sprites };
        prop_assert_eq!(SceneSpec::from_ini_str(&spec.to_ini_string()).unwrap(), spec);
    }

    #[test]
    fn ground_truth_aligns_the_input(sprites in prop::collection::vec(sprite(), 1..3), seed in 0u64..1000) {
        let spec = SceneSpec { height: 32, width: 32, frames: 4, background_seed: seed, frame_rate: 8.0, sprites };
        let scene = synthesize_scene::<f64>(&spec, seed).unwrap();
        let mse = pixel_mse(&scene.frames, &scene.flows, &scene.masks).unwrap();
        prop_assert!(mse <= 1e-4, "input pixel-MSE {}", mse);
    }
}

#[test]
fn scoring_a_clip_against_itself() {
    let scene = synthesize_scene::<f64>(&benchmark_scene(), 3).unwrap();
    let report = evaluate(&scene.frames, &scene.frames, &scene.flows, &scene.masks).unwrap();
    assert!(report.is_finite());
    assert_eq!(report.spat_con, 0.0);
    assert!(report.pixel_mse <= 1e-4);
    assert!(report.temp_con > 0.0 && report.temp_con <= 1.0 + 1e-12);
    let kv = report.to_key_values();
    assert!(kv.starts_with("pixel_mse="));
    assert_eq!(kv.lines().filter(|l| l.starts_with("pixel_mse.")).count(), 7);
}

#[test]
fn fully_occluded_pairs_are_skipped() {
    let scene = synthesize_scene::<f64>(&small_scene(3), 1).unwrap();
    let masks: Vec<_> = (0..2).map(|i| OcclusionMask::all_invalid(i, i + 1, 32, 32)).collect();
    let pairs = pixel_mse_pairs(scene.frames.frames(), &scene.flows, &masks).unwrap();
    assert_eq!(pairs, vec![None, None]);
}
