mod common;

use common::*;
use fresco_core::media::synthesize_scene;
use fresco_core::metrics::pixel_mse;
use fresco_core::pipeline::{Anchors, BatchInput, Engine, Mode, Propagation, RunConfig};

fn quick() -> RunConfig {
    RunConfig {
        steps: 6,
        batch_size: 4,
        ..RunConfig::default()
    }
}

#[test]
fn pinned_anchor_follows_the_recorded_trajectory() {
    let scene = synthesize_scene::<f64>(&small_scene(6), 2).unwrap();
    let corr = scene.correspondence();
    let engine = Engine::<f64>::new(quick()).unwrap();
    let frames = scene.frames.frames();

    let ids_a = [0, 1, 2, 3];
    let a = engine
        .run_batch(
            Mode::Translate,
            &BatchInput { frames: &frames[0..4], ids: &ids_a, corr: &corr },
            &Anchors { pinned: vec![], record: vec![0, 3] },
        )
        .unwrap();
    let start = engine.cfg.start_step();
    let mut recorded = a.trajectories[1].timesteps();
    recorded.sort_unstable();
    assert_eq!(recorded, (0..=start).collect::<Vec<_>>());
    assert_eq!(a.trajectories[1].at(0).unwrap(), &a.latents[3]);

    let ids_b = [0, 3, 4, 5];
    let b_frames = vec![frames[0].clone(), frames[3].clone(), frames[4].clone(), frames[5].clone()];
    let b = engine
        .run_batch(
            Mode::Translate,
            &BatchInput { frames: &b_frames, ids: &ids_b, corr: &corr },
            &Anchors { pinned: vec![(0, &a.trajectories[0]), (1, &a.trajectories[1])], record: vec![] },
        )
        .unwrap();
    assert_eq!(b.latents[0], a.latents[0]);
    assert_eq!(b.latents[1], a.latents[3]);
    assert_eq!(b.frames[1], a.frames[3]);
}

#[test]
fn every_long_mode_runs_and_keeps_the_ends() {
    let scene = synthesize_scene::<f32>(&small_scene(10), 3).unwrap();
    let corr = scene.correspondence();
    for propagation in [Propagation::Warp, Propagation::Tokens, Propagation::ThreeLevel] {
        let cfg = RunConfig {
            mode: Mode::Long,
            propagation,
            s_max: 3,
            keyframes_per_step: 3,
            ..quick()
        };
        let engine = Engine::<f32>::new(cfg).unwrap();
        let out = engine.run(&scene.frames, Some(&corr)).unwrap();
        assert_eq!(out.frames.len(), 10);
        assert!(out.frames.frames().iter().all(|f| f.is_finite()));
        let plan = out.plan_text(engine.schedule_for(4).as_ref());
        match propagation {
            Propagation::Tokens => assert!(out.keyframes.is_none()),
            _ => {
                let k = out.keyframes.as_ref().unwrap();
                assert_eq!((k.keyframes[0], *k.keyframes.last().unwrap()), (0, 9));
                assert!(k.max_gap() <= 3);
                assert!(plan.starts_with("# keyframes"));
            }
        }
        let mse = pixel_mse(&out.frames, &scene.flows, &scene.masks).unwrap();
        assert!(mse.is_finite() && mse < 0.05, "{} pixel-MSE {mse}", propagation.name());
    }
}

#[test]
fn single_and_double_precision_agree() {
    let spec = small_scene(3);
    let cfg = RunConfig {
        flags: Some(fresco_core::pipeline::FrescoFlags::NONE),
        ..quick()
    };
    let a = synthesize_scene::<f64>(&spec, 1).unwrap();
    let b = synthesize_scene::<f32>(&spec, 1).unwrap();
    let out64 = Engine::<f64>::new(cfg.clone()).unwrap().run(&a.frames, Some(&a.correspondence())).unwrap();
    let out32 = Engine::<f32>::new(cfg).unwrap().run(&b.frames, Some(&b.correspondence())).unwrap();
    let widened: Vec<_> = out32.frames.frames().iter().map(|g| g.cast::<f64>()).collect();
    let diff = max_abs_diff(out64.frames.frames(), &widened);
    assert!(diff < 1e-3, "f32 and f64 outputs differ by {diff}");
}

#[test]
fn editing_records_one_inversion_per_batch() {
    let scene = synthesize_scene::<f64>(&small_scene(6), 2).unwrap();
    let cfg = RunConfig { mode: Mode::Edit, ..quick() };
    let out = Engine::<f64>::new(cfg).unwrap().run(&scene.frames, None).unwrap();
    assert_eq!(out.inversions.len(), 2);
    assert_eq!(out.inversions[0].steps.len(), 6);
    assert_eq!(out.inversions[1].steps[0].q[0].len(), 2);
}

#[test]
fn config_survives_its_text_form() {
    let mut cfg = RunConfig::default();
    cfg.set("fresco", "temporal_loss,cross_frame").unwrap();
    cfg.set("propagation", "three-level").unwrap();
    cfg.set("seed", "42").unwrap();
    let back = RunConfig::from_ini_str(&cfg.to_ini_string()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(cfg.set("strength", "2").and_then(|_| cfg.validate()).map_err(|e| e.exit_code()), Err(2));
}
