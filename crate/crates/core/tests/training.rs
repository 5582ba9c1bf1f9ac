mod support;

use std::fs;

use proptest::prelude::*;
use rstt::checkpoint::{MAGIC, VERSION};
use rstt::params::InitScheme;
use rstt::train::{
    charbonnier_value, cosine_restart_lr, degrade, synth_clip, train_loop, AdamState, AdamW, CharbonnierMode, DataSource, FixedSample, LoopOutput,
    MovingRect, Scene, SyntheticStream, TrainSample, CHECKPOINT_FILE, LOSS_FILE,
};
use rstt::{Checkpoint, ClipSeptet, FrameQuad, ModelConfig, ParamStore, Rstt, RsttError, TrainConfig, Trainer};
use rstt_tensor::ops::resample::bicubic_downsample;
use rstt_tensor::{seeded_rng, Tensor};
use support::ReferenceAdamW;

#[test]
fn charbonnier_of_identical_inputs_is_eps() {
    let x = Tensor::<f32>::uniform(&[2, 3, 8, 8], 0.0, 1.0, &mut seeded_rng(1));
    assert_eq!(charbonnier_value(&x, &x, 1e-3, CharbonnierMode::Elementwise).unwrap(), 1e-3f32 as f64);
    let y = x.cast::<f64>();
    assert_eq!(charbonnier_value(&y, &y, 1e-3, CharbonnierMode::Elementwise).unwrap(), 1e-3);
    assert_eq!(charbonnier_value(&y, &y, 1e-3, CharbonnierMode::Global).unwrap(), 1e-3);
}

#[test]
fn global_charbonnier_is_the_norm_of_the_difference() {
    let a = Tensor::<f64>::from_f64(&[4], &[0.0, 0.3, 0.0, 0.0]).unwrap();
    let b = Tensor::<f64>::from_f64(&[4], &[0.0, 0.0, 0.4, 0.0]).unwrap();
    let v = charbonnier_value(&a, &b, 1e-3, CharbonnierMode::Global).unwrap();
    assert!((v - (0.25f64 + 1e-6).sqrt()).abs() < 1e-15);
    let e = charbonnier_value(&a, &b, 1e-3, CharbonnierMode::Elementwise).unwrap();
    let want = ((0.09f64 + 1e-6).sqrt() + (0.16f64 + 1e-6).sqrt() + 2e-3) / 4.0;
    assert!((e - want).abs() < 1e-15);
}

#[test]
fn schedule_hits_its_anchor_values() {
    let cfg = TrainConfig::default();
    assert_eq!(cosine_restart_lr(0, &cfg), 2e-4);
    assert_eq!(cosine_restart_lr(30_000, &cfg), 2e-4);
    assert!((cosine_restart_lr(15_000, &cfg) - 1.0005e-4).abs() < 1e-15);
    assert!((cosine_restart_lr(29_999, &cfg) - 1e-7).abs() < 1e-12);
}

#[test]
fn warmup_ramps_linearly_then_follows_the_schedule() {
    let cfg = TrainConfig { warmup_iters: 4, ..TrainConfig::default() };
    for i in 0..4 {
        assert!((cfg.lr_at(i) - cosine_restart_lr(i, &cfg) * (i + 1) as f64 / 4.0).abs() < 1e-20);
    }
    assert_eq!(cfg.lr_at(4), cosine_restart_lr(4, &cfg));
    assert_eq!(TrainConfig::default().lr_at(7), cosine_restart_lr(7, &TrainConfig::default()));
}

#[test]
fn invalid_train_configs_are_rejected() {
    let bad = [
        TrainConfig { restart_period: 0, ..Default::default() },
        TrainConfig { lr_min: 1.0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { beta2: 1.0, ..Default::default() },
        TrainConfig { charbonnier_eps: 0.0, ..Default::default() },
    ];
    for cfg in bad {
        assert!(matches!(cfg.validate(), Err(RsttError::Config(_))), "{cfg:?}");
    }
    let json = r#"{"lr0": 1e-3, "momentum": 0.9}"#;
    assert!(serde_json::from_str::<TrainConfig>(json).is_err());
}

fn store(sizes: &[usize], seed: u64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    let mut rng = seeded_rng(seed);
    for (i, &n) in sizes.iter().enumerate() {
        s.add(format!("p{i}"), Tensor::randn(&[n], 1.0, &mut rng)).unwrap();
    }
    s
}

#[test]
fn adamw_matches_reference_updater_over_five_steps() {
    let sizes = [7, 3, 12];
    let opt = AdamW { beta1: 0.9, beta2: 0.99, eps: 1e-8, weight_decay: 1e-2 };
    let mut params = store(&sizes, 2);
    let mut state = AdamState::new(params.tensors());
    let mut reference = ReferenceAdamW::new(&sizes, opt.beta1, opt.beta2, opt.eps, opt.weight_decay);
    let mut flat: Vec<Vec<f64>> = params.tensors().iter().map(|t| t.to_f64_vec()).collect();
    let mut rng = seeded_rng(3);
    for step in 0..5 {
        let lr = 1e-2 / (step + 1) as f64;
        let grads: Vec<Tensor<f64>> = sizes.iter().map(|&n| Tensor::randn(&[n], 1.0, &mut rng)).collect();
        let mut opt_grads: Vec<Option<Tensor<f64>>> = grads.iter().cloned().map(Some).collect();
        let mut ref_grads: Vec<Vec<f64>> = grads.iter().map(|g| g.to_f64_vec()).collect();
        if step == 2 {
            opt_grads[1] = None;
            ref_grads[1] = vec![0.0; sizes[1]];
        }
        opt.step(&mut params, &opt_grads, &mut state, lr).unwrap();
        reference.step(&mut flat, &ref_grads, lr);
    }
    for (t, want) in params.tensors().iter().zip(&flat) {
        for (a, b) in t.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}

#[test]
fn adamw_without_decay_or_gradient_changes_nothing() {
    let mut params = store(&[5, 4], 4);
    let before = params.clone();
    let mut state = AdamState::new(params.tensors());
    let opt = AdamW { weight_decay: 0.0, ..AdamW::default() };
    for _ in 0..3 {
        opt.step(&mut params, &[None, Some(Tensor::zeros(&[4]))], &mut state, 1e-2).unwrap();
    }
    assert_eq!(params, before);
}

#[test]
fn adamw_rejects_non_finite_gradients_before_touching_anything() {
    let mut params = store(&[3, 3], 5);
    let before = params.clone();
    let mut state = AdamState::new(params.tensors());
    let bad = Tensor::from_f64(&[3], &[0.0, f64::INFINITY, 0.0]).unwrap();
    let err = AdamW::default().step(&mut params, &[Some(Tensor::ones(&[3])), Some(bad)], &mut state, 1e-2).unwrap_err();
    assert!(matches!(err, RsttError::NonFinite { ref what } if what.contains("p1")), "{err}");
    assert_eq!(params, before);
    assert_eq!(state.step, 0);
}

/// One flat-coloured rectangle over a flat background, moved analytically.
#[test]
fn synthetic_objects_move_at_their_velocity() {
    let rect = MovingRect { x0: 5.25, y0: 20.5, width: 9.0, height: 6.5, vx: 1.5, vy: -0.75, color: [0.9, 0.2, 0.1], fx: 0.0, fy: 0.0, amp: 0.0 };
    let scene = Scene { base: [0.3; 3], tint: [0.3; 3], fx: 0.0, fy: 0.0, phase: 0.0, objects: vec![rect.clone()] };
    for t in 0..7 {
        let frame = scene.render::<f64>(t as f64, 32, 40);
        let (ox, oy) = (rect.x0 + rect.vx * t as f64, rect.y0 + rect.vy * t as f64);
        for y in 0..32 {
            for x in 0..40 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let inside = px >= ox && px < ox + rect.width && py >= oy && py < oy + rect.height;
                let want = if inside { rect.color[0] } else { 0.3 };
                assert_eq!(frame.at(&[0, y, x]), want, "t={t} ({x}, {y})");
            }
        }
    }
}

#[test]
fn synthetic_clips_are_deterministic_and_in_range() {
    let a = synth_clip::<f32>(7, 64, 48).unwrap();
    let b = synth_clip::<f32>(7, 64, 48).unwrap();
    let c = synth_clip::<f32>(8, 64, 48).unwrap();
    assert!(a.tensor().bit_eq(b.tensor()));
    assert!(!a.tensor().bit_eq(c.tensor()));
    assert_eq!(a.tensor().shape(), &[7, 3, 64, 48]);
    assert!(a.tensor().data().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(!a.frame(0).bit_eq(&a.frame(6)), "objects should move");
    for seed in 0..20 {
        let n = Scene::random(seed, 64, 64).objects.len();
        assert!((2..=4).contains(&n));
    }
    assert!(synth_clip::<f32>(0, 30, 64).is_err());
    assert!(synth_clip::<f32>(0, 64, 66).is_err());
}

#[test]
fn degraded_input_is_the_downsampled_anchor_frames() {
    let clip = synth_clip::<f64>(9, 64, 32).unwrap();
    let sample = degrade(&clip).unwrap();
    let anchors: Vec<Tensor<f64>> = [0, 2, 4, 6].iter().map(|&i| clip.frame(i)).collect();
    let hr = FrameQuad::from_frames(&anchors).unwrap();
    let want = bicubic_downsample(hr.tensor(), 4).unwrap();
    assert!(sample.input.tensor().bit_eq(&want));
    assert_eq!(sample.input.tensor().shape(), &[4, 3, 16, 8]);
    assert!(sample.target.tensor().bit_eq(clip.tensor()));
}

#[test]
fn stream_samples_depend_only_on_iteration_and_slot() {
    let mut s = SyntheticStream { seed: 3, height: 32, width: 32 };
    let a: TrainSample<f32> = s.sample(5, 1).unwrap();
    let b: TrainSample<f32> = s.sample(5, 1).unwrap();
    let c: TrainSample<f32> = s.sample(6, 1).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

fn tiny_trainer<T: rstt_tensor::Float>(iters: u64) -> Trainer<T> {
    let model = Rstt::<T>::with_init(ModelConfig::tiny(), 1, InitScheme::Standard).unwrap();
    let cfg = TrainConfig { lr0: 1e-3, batch_size: 1, max_iters: iters, ..Default::default() };
    Trainer::new(model, cfg).unwrap()
}

fn fixed<T: rstt_tensor::Float>() -> FixedSample<T> {
    FixedSample(degrade(&synth_clip(4, 32, 32).unwrap()).unwrap())
}

#[test]
fn checkpoints_round_trip_in_both_precisions() {
    let mut t32 = tiny_trainer::<f32>(2);
    t32.step(&mut fixed()).unwrap();
    let ck = t32.checkpoint();
    let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    assert_eq!(back, ck);
    let wide = Checkpoint::<f64>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    assert_eq!(wide.params, ck.params.cast::<f64>());

    let mut t64 = tiny_trainer::<f64>(2);
    t64.step(&mut fixed()).unwrap();
    let ck = t64.checkpoint();
    assert_eq!(Checkpoint::<f64>::from_bytes(&ck.to_bytes().unwrap()).unwrap(), ck);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.rstt");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::<f64>::load(&path).unwrap(), ck);
    assert!(!dir.path().join("a.rstt.partial").exists());
}

#[test]
fn malformed_checkpoints_are_rejected() {
    let bytes = tiny_trainer::<f32>(1).checkpoint().to_bytes().unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    let mut wrong_version = bytes.clone();
    wrong_version[4..8].copy_from_slice(&(VERSION + 1).to_le_bytes());
    let err = Checkpoint::<f32>::from_bytes(&wrong_version).unwrap_err();
    assert!(matches!(err, RsttError::Checkpoint(ref m) if m.contains("version")), "{err}");
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(Checkpoint::<f32>::from_bytes(&wrong_magic).is_err());
    assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::<f32>::from_bytes(&bytes[..6]).is_err());
}

#[test]
fn resuming_reproduces_the_next_loss_bit_exactly() {
    let mut data = SyntheticStream { seed: 11, height: 32, width: 32 };
    let mut straight = tiny_trainer::<f64>(6);
    for _ in 0..3 {
        straight.step(&mut data).unwrap();
    }
    let bytes = straight.checkpoint().to_bytes().unwrap();
    let next = straight.step(&mut data).unwrap();
    let mut resumed = Trainer::<f64>::resume(Checkpoint::from_bytes(&bytes).unwrap(), straight.config.clone()).unwrap();
    assert_eq!(resumed.iteration, 3);
    let again = resumed.step(&mut data).unwrap();
    assert_eq!(again.loss.to_bits(), next.loss.to_bits());
    assert_eq!(again, next);
}

#[test]
fn training_is_reproducible() {
    let run = || {
        let mut t = tiny_trainer::<f64>(3);
        train_loop(&mut t, &mut SyntheticStream { seed: 2, height: 32, width: 32 }, &LoopOutput::default(), |_| {}).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn train_loop_writes_loss_rows_and_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let out = LoopOutput { dir: Some(dir.path().to_path_buf()) };
    let mut t = tiny_trainer::<f32>(4);
    let mut seen = 0;
    let records = train_loop(&mut t, &mut fixed(), &out, |_| seen += 1).unwrap();
    assert_eq!((records.len(), seen), (4, 4));
    let csv = fs::read_to_string(dir.path().join(LOSS_FILE)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "iteration,lr,loss");
    assert_eq!(lines.len(), 5);
    let ck = Checkpoint::<f32>::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.iteration, 4);
    assert_eq!(&ck.params, t.model.params());
}

/// Finite for the first two iterations, then a NaN input.
struct PoisonAfterTwo(FixedSample<f32>);

impl DataSource<f32> for PoisonAfterTwo {
    fn sample(&mut self, iteration: u64, index: usize) -> rstt::Result<TrainSample<f32>> {
        let mut s = self.0.sample(iteration, index)?;
        if iteration >= 2 {
            let mut x = s.input.into_tensor();
            x.data_mut()[0] = f32::NAN;
            s.input = FrameQuad::new(x)?;
        }
        Ok(s)
    }
}

#[test]
fn non_finite_loss_stops_training_and_keeps_the_last_good_weights() {
    let dir = tempfile::tempdir().unwrap();
    let out = LoopOutput { dir: Some(dir.path().to_path_buf()) };
    let mut t = tiny_trainer::<f32>(5);
    let err = train_loop(&mut t, &mut PoisonAfterTwo(fixed()), &out, |_| {}).unwrap_err();
    assert!(matches!(err, RsttError::NonFinite { .. }), "{err}");
    let ck = Checkpoint::<f32>::load(&dir.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.iteration, 2);
    assert_eq!(&ck.params, t.model.params());
    assert!(ck.params.tensors().iter().all(|p| p.is_finite()));
}

#[test]
fn one_step_lowers_the_loss_on_a_fixed_sample() {
    let mut t = tiny_trainer::<f64>(3);
    let mut data = fixed::<f64>();
    let before = t.eval_loss(&mut data).unwrap();
    t.step(&mut data).unwrap();
    t.step(&mut data).unwrap();
    assert!(t.eval_loss(&mut data).unwrap() < before);
}

#[test]
fn clip_types_reject_wrong_frame_counts() {
    assert!(ClipSeptet::<f32>::new(Tensor::zeros(&[6, 3, 8, 8])).is_err());
    assert!(ClipSeptet::<f32>::from_frames(&vec![Tensor::zeros(&[3, 8, 8]); 7]).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn charbonnier_bounds_mean_absolute_error(seed in any::<u64>(), eps in 1e-6f64..1e-1) {
        let mut rng = seeded_rng(seed);
        let a = Tensor::<f64>::uniform(&[3, 4, 5], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[3, 4, 5], -1.0, 1.0, &mut rng);
        let mae = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64;
        let c = charbonnier_value(&a, &b, eps, CharbonnierMode::Elementwise).unwrap();
        prop_assert!(c >= mae);
        prop_assert!(c <= mae + eps + 1e-12);
    }

    #[test]
    fn schedule_is_periodic_and_non_increasing_within_a_period(period in 1u64..500, i in 0u64..2000, lr0 in 1e-5f64..1e-2) {
        let cfg = TrainConfig { lr0, lr_min: lr0 / 100.0, restart_period: period, ..Default::default() };
        prop_assert_eq!(cosine_restart_lr(i, &cfg), cosine_restart_lr(i + period, &cfg));
        prop_assert_eq!(cosine_restart_lr(i * period, &cfg), lr0);
        if (i + 1) % period != 0 {
            prop_assert!(cosine_restart_lr(i + 1, &cfg) <= cosine_restart_lr(i, &cfg));
        }
        let lr = cosine_restart_lr(i, &cfg);
        prop_assert!(lr >= cfg.lr_min && lr <= lr0);
    }
}
