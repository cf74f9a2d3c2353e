use beatrack::data::{synthesize_click_track, ClickTrackSpec, MeterSequence, Piece, TempoCurve};
use beatrack::loss::{FrameTargets, LossKind, PositiveWeight};
use beatrack::model::{Model, ModelConfig, ParamKind};
use beatrack::trainer::{accumulate, lr_at, stack, Sample, TrainConfig, Trainer};
use beatrack_tensor::{NormMode, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy() -> ModelConfig {
    ModelConfig {
        stem_channels: 8,
        head_dim: 8,
        frontend_heads: vec![1],
        main_dim: 32,
        main_heads: 4,
        main_blocks: 1,
        ffn_mult: 2,
        ..ModelConfig::full()
    }
}

fn click_pieces(n: usize, seconds: f64, seed: u64) -> Vec<Piece> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let bpm = rng.random_range(60.0..180.0);
            let meter = if rng.random_bool(0.5) { 3 } else { 4 };
            let mut spec = ClickTrackSpec::new(
                seconds,
                TempoCurve::constant(bpm).unwrap(),
                MeterSequence::constant(meter).unwrap(),
            );
            spec.start_offset = rng.random_range(0.0..1.0);
            spec.noise = 0.01;
            let (audio, ann) = synthesize_click_track(&spec, &mut rng).unwrap();
            Piece::from_audio(format!("p{i}"), &audio, ann).unwrap()
        })
        .collect()
}

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        accumulation: 1,
        warmup_steps: 5,
        peak_lr: 3e-3,
        excerpt_seconds: 5.0,
        excerpt_alpha: 1.0,
        validate_every: 0,
        ..TrainConfig::default()
    }
}

fn random_samples(n: usize, frames: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let spec = (0..frames * 128).map(|_| rng.random_range(0.0..3.0)).collect();
            let mut targets = FrameTargets::new(frames);
            for f in 0..frames {
                let beat = rng.random_bool(0.3);
                targets.set(f, 0, beat as u8);
                targets.set(f, 1, (beat && rng.random_bool(0.3)) as u8);
                if rng.random_bool(0.1) {
                    targets.set_valid(f, 1, false);
                }
            }
            Sample { spec, targets }
        })
        .collect()
}

#[test]
fn accumulated_gradient_equals_large_batch_gradient() {
    let tiny = ModelConfig {
        frontend_heads: vec![1],
        main_dim: 64,
        main_heads: 2,
        main_blocks: 1,
        ..ModelConfig::full()
    };
    let mut model = Model::<f64>::new(tiny, 3).unwrap();
    let samples = random_samples(64, 8, 1);
    let weights = PositiveWeight { beat: 2.5, downbeat: 6.0 };
    let micro: Vec<(Tensor<f64>, Vec<FrameTargets>)> =
        samples.chunks(8).map(|c| stack(c, 128).unwrap()).collect();
    let whole = vec![stack(&samples, 128).unwrap()];
    for kind in [LossKind::WeightedBce, LossKind::ShiftTolerant] {
        let a = accumulate(&mut model, &micro, weights, kind, NormMode::Eval).unwrap();
        let b = accumulate(&mut model, &whole, weights, kind, NormMode::Eval).unwrap();
        assert!((a.loss - b.loss).abs() <= 1e-9 * b.loss.abs());
        let mut worst = 0.0f64;
        for (ga, gb) in a.grads.iter().zip(&b.grads) {
            for (x, y) in ga.iter().zip(gb) {
                worst = worst.max((x - y).abs() / y.abs().max(1.0));
            }
        }
        assert!(worst < 1e-5, "{kind:?}: {worst}");
    }
}

#[test]
fn two_epochs_on_four_pieces_are_finite_and_reproducible() {
    let pieces = click_pieces(4, 8.0, 5);
    let run = || {
        let mut t = Trainer::new(toy(), quick_config(2), &pieces).unwrap();
        t.run(&pieces, &[]).unwrap();
        t
    };
    let a = run();
    let b = run();
    assert_eq!(a.history.len(), 2);
    assert!(a.step_losses.iter().all(|l| l.is_finite()));
    let bits = |t: &Trainer| t.step_losses.iter().map(|l| l.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    for (pa, pb) in a.model.params().iter().zip(b.model.params().iter()) {
        assert_eq!(pa.value.data(), pb.value.data(), "{}", pa.name);
    }
}

#[test]
fn training_loss_halves_within_thirty_steps() {
    let pieces = click_pieces(30, 20.0, 7);
    let cfg = TrainConfig {
        augment: false,
        ..quick_config(1)
    };
    let mut t = Trainer::new(toy(), cfg, &pieces).unwrap();
    t.train_epoch(&pieces, &[]).unwrap();
    let l = &t.step_losses;
    assert!(l.len() >= 30, "{}", l.len());
    let start = l[..3].iter().sum::<f64>() / 3.0;
    let end = l[27..30].iter().sum::<f64>() / 3.0;
    println!("loss {start:.1} -> {end:.1}");
    assert!(end <= 0.5 * start, "{start} -> {end}");
}

#[test]
fn resume_continues_bit_identically() {
    let pieces = click_pieces(4, 8.0, 11);
    let dir = tempfile::tempdir().unwrap();
    let mut straight = Trainer::new(toy(), quick_config(2), &pieces).unwrap();
    straight.run(&pieces, &[]).unwrap();

    let mut first = Trainer::new(toy(), quick_config(2), &pieces)
        .unwrap()
        .with_output(dir.path());
    first.train_epoch(&pieces, &[]).unwrap();
    let ck = beatrack_tensor::Checkpoint::<f32>::load(&dir.path().join("epoch1.ckpt")).unwrap();
    let mut resumed = Trainer::resume(&ck).unwrap().with_output(dir.path());
    assert_eq!(resumed.epochs_done(), 1);
    resumed.run(&pieces, &[]).unwrap();
    assert!(dir.path().join("epoch2.ckpt").exists());
    assert_eq!(resumed.history, straight.history);
    for (pa, pb) in resumed.model.params().iter().zip(straight.model.params().iter()) {
        assert_eq!(pa.value.data(), pb.value.data(), "{}", pa.name);
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("epoch,step,lr,train_loss,val_beat_f1,val_downbeat_f1"));
}

#[test]
fn weight_decay_never_touches_biases_or_norms() {
    let pieces = click_pieces(2, 6.0, 2);
    let mut t = Trainer::new(toy(), quick_config(1), &pieces).unwrap();
    t.train_epoch(&pieces, &[]).unwrap();
    let decayed = t.optimizer.last_decayed();
    assert!(!decayed.is_empty());
    for (id, p) in t.model.params().iter().enumerate() {
        assert_eq!(decayed.contains(&id), p.kind == ParamKind::Weight, "{}", p.name);
    }
}

#[test]
fn epoch_plan_depends_only_on_seed_and_epoch() {
    let pieces = click_pieces(6, 12.0, 3);
    let t = Trainer::new(toy(), quick_config(3), &pieces).unwrap();
    let u = Trainer::new(toy(), quick_config(3), &pieces).unwrap();
    assert_eq!(t.epoch_plan(&pieces, 2), u.epoch_plan(&pieces, 2));
    assert_ne!(t.epoch_plan(&pieces, 1), t.epoch_plan(&pieces, 2));
    assert_eq!(t.total_steps(), 3 * (6 * 2usize).div_ceil(4) as u64);
}

#[test]
fn validation_is_monitoring_only() {
    let pieces = click_pieces(3, 8.0, 4);
    let cfg = TrainConfig {
        validate_every: 1,
        ..quick_config(2)
    };
    let mut t = Trainer::new(toy(), cfg, &pieces).unwrap();
    let history = t.run(&pieces, &pieces[..1]).unwrap();
    assert_eq!(history.len(), 2);
    assert!(history.iter().all(|h| h.val_beat_f1.is_some()));
}

proptest! {
    #[test]
    fn schedule_is_continuous_and_bounded(warmup in 1u64..2000, extra in 1u64..5000, step_frac in 0.0f64..1.0) {
        let cfg = TrainConfig { warmup_steps: warmup, ..TrainConfig::default() };
        let total = warmup + extra;
        let jump = cfg.peak_lr / warmup as f64 + cfg.peak_lr * (std::f64::consts::PI / extra as f64);
        let below = lr_at(warmup - 1, total, &cfg).unwrap();
        let at = lr_at(warmup, total, &cfg).unwrap();
        let above = lr_at(warmup + 1, total, &cfg).unwrap();
        prop_assert!((at - cfg.peak_lr).abs() < 1e-15);
        prop_assert!((at - below).abs() <= jump && (at - above).abs() <= jump);
        let step = (step_frac * total as f64) as u64;
        let lr = lr_at(step, total, &cfg).unwrap();
        prop_assert!((0.0..=cfg.peak_lr).contains(&lr));
    }
}
