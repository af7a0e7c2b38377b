//! Training loop: determinism, smoke-training oracles, checkpoint layout
//! and resumption.

use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use snic_core::data::ImageTensor;
use snic_core::synthetic::synthetic_corpus;
use snic_core::training::{
    checkpoint_dir, lambda_dir, run_trainer, train, TrainConfig, Trainer, LAMBDA_GRID, METRICS_HEADER,
};
use snic_core::{CompressionModel, ModelConfig, SnicError};
use snic_nn::Tensor;

fn corpus(count: usize, side: usize, seed: u64) -> Vec<ImageTensor> {
    synthetic_corpus(count, side, &mut ChaCha8Rng::seed_from_u64(seed)).iter().map(|s| s.to_levels()).collect()
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        model: ModelConfig::tiny(),
        lambdas: vec![0.0125],
        epochs: 1,
        steps_per_epoch: Some(10),
        batch: 2,
        crop: 64,
        lr_start: 1e-3,
        lr_end: 1e-5,
        perc: 0.0,
        seed: 3,
        ..TrainConfig::default()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn identical_seeds_give_identical_runs() {
    let images = corpus(4, 64, 1);
    let run = || {
        let mut t = Trainer::new(tiny_config(), 0, 10).unwrap();
        let metrics: Vec<_> = (0..10).map(|_| t.train_step(&t.sample_batch(&images).unwrap()).unwrap()).collect();
        (metrics, t.model.store.to_le_bytes())
    };
    let (m1, p1) = run();
    let (m2, p2) = run();
    assert_eq!(m1, m2);
    assert_eq!(p1, p2);
    let cfg = TrainConfig { seed: 4, ..tiny_config() };
    let mut other = Trainer::new(cfg, 0, 10).unwrap();
    let first = other.train_step(&other.sample_batch(&images).unwrap()).unwrap();
    assert_ne!(first.rate_bits, m1[0].rate_bits);
}

#[test]
fn constant_images_become_cheaper_and_loss_decreases() {
    let images: Vec<ImageTensor> =
        [60.0, 100.0, 140.0, 180.0].iter().map(|&v| ImageTensor::new(vec![v; 64 * 64], 64, 64).unwrap()).collect();
    let cfg = TrainConfig { model: ModelConfig::desk(), batch: 4, ..tiny_config() };
    let steps = 200;
    let mut t = Trainer::new(cfg, 0, steps).unwrap();
    let mut metrics = Vec::new();
    while t.step < steps {
        metrics.push(t.train_step(&t.sample_batch(&images).unwrap()).unwrap());
    }
    let first = metrics[0].rate_bits;
    let last = metrics.last().unwrap().rate_bits;
    assert!(last < first, "rate did not decrease: {first} -> {last}");
    let k = metrics.len() / 10;
    let early = median(metrics[..k].iter().map(|m| m.loss).collect());
    let late = median(metrics[metrics.len() - k..].iter().map(|m| m.loss).collect());
    assert!(late < early, "loss did not decrease: {early} -> {late}");
}

#[test]
fn zero_adversarial_weight_never_builds_a_discriminator() {
    let images = corpus(2, 64, 2);
    let cfg = TrainConfig { adversarial: true, adv: 0.0, ..tiny_config() };
    let mut t = Trainer::new(cfg, 0, 2).unwrap();
    assert!(t.adversary.is_none());
    let m = t.train_step(&t.sample_batch(&images).unwrap()).unwrap();
    assert_eq!((m.adv, m.disc_loss), (0.0, 0.0));
}

#[test]
fn adversarial_steps_update_the_discriminator() {
    let images = corpus(2, 64, 2);
    let cfg = TrainConfig { adversarial: true, adv: 0.01, disc_width: 4, ..tiny_config() };
    let mut t = Trainer::new(cfg, 0, 2).unwrap();
    let before = t.adversary.as_ref().unwrap().store.to_le_bytes();
    let m = t.train_step(&t.sample_batch(&images).unwrap()).unwrap();
    assert!(m.adv > 0.0 && m.disc_loss > 0.0);
    assert_ne!(t.adversary.as_ref().unwrap().store.to_le_bytes(), before);
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let mut t = Trainer::new(tiny_config(), 0, 1).unwrap();
    let mut x = Tensor::full(&[1, 1, 64, 64], 100.0);
    x.data_mut()[17] = f64::NAN;
    match t.train_step(&x) {
        Err(SnicError::Other(msg)) => assert!(msg.contains("non-finite loss at step 0"), "{msg}"),
        other => panic!("expected an abort, got {other:?}"),
    }
}

#[test]
fn full_grid_emits_one_checkpoint_per_lambda() {
    let images = corpus(2, 64, 5);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig { lambdas: LAMBDA_GRID.to_vec(), steps_per_epoch: Some(1), batch: 1, ..tiny_config() };
    let ckpts = train(&cfg, &images, dir.path(), |_, _| {}).unwrap();
    assert_eq!(ckpts.len(), 7);
    for (i, c) in ckpts.iter().enumerate() {
        assert_eq!(c, &checkpoint_dir(dir.path(), i as u8, 1));
        let m = CompressionModel::load(&c.join("model.snck")).unwrap();
        assert_eq!(m.meta.lambda_index, i as u8);
        assert_eq!(m.meta.lambda, Some(LAMBDA_GRID[i]));
        assert!(c.join("train_state.snck").is_file());
        let csv = fs::read_to_string(lambda_dir(dir.path(), i as u8).join("metrics.csv")).unwrap();
        assert_eq!(csv.lines().next(), Some(METRICS_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }
}

#[test]
fn resuming_reproduces_an_uninterrupted_run() {
    let images = corpus(3, 64, 6);
    let cfg = TrainConfig { epochs: 2, steps_per_epoch: Some(4), adversarial: true, disc_width: 4, ..tiny_config() };

    let full_dir = tempfile::tempdir().unwrap();
    let full = train(&cfg, &images, full_dir.path(), |_, _| {}).unwrap();

    // Interrupted run: stop after the first epoch, then resume from its checkpoint.
    let split_dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(cfg.clone(), 0, 8).unwrap();
    for _ in 0..4 {
        t.train_step(&t.sample_batch(&images).unwrap()).unwrap();
    }
    let first = checkpoint_dir(split_dir.path(), 0, 1);
    t.save(&first).unwrap();
    drop(t);
    let mut resumed = Trainer::resume(&first).unwrap();
    assert_eq!(resumed.step, 4);
    let last = run_trainer(&mut resumed, &images, split_dir.path(), |_| {}).unwrap();

    let a = fs::read(full[0].join("model.snck")).unwrap();
    let b = fs::read(last.join("model.snck")).unwrap();
    assert_eq!(a, b, "model differs after resumption");
    let a = fs::read(full[0].join("train_state.snck")).unwrap();
    let b = fs::read(last.join("train_state.snck")).unwrap();
    assert_eq!(a, b, "optimizer state differs after resumption");
}

#[test]
fn desk_smoke_run_completes_and_checkpoints_load() {
    let images = corpus(8, 64, 7);
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        model: ModelConfig::desk(),
        lambdas: vec![0.0035, 0.0250],
        epochs: 5,
        steps_per_epoch: None,
        batch: 4,
        crop: 32,
        ..tiny_config()
    };
    let mut steps = [0usize; 2];
    let ckpts = train(&cfg, &images, dir.path(), |i, _| steps[i] += 1).unwrap();
    assert_eq!(steps, [10, 10]);
    assert_eq!(ckpts.len(), 2);
    for (i, c) in ckpts.iter().enumerate() {
        let m = CompressionModel::load(&c.join("model.snck")).unwrap();
        assert_eq!(m.meta.lambda, Some(cfg.lambdas[i]));
        assert_eq!(m.meta.steps, 10);
        for epoch in 1..=5 {
            assert!(checkpoint_dir(dir.path(), m.meta.lambda_index, epoch).join("model.snck").is_file());
        }
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let images = corpus(1, 64, 8);
    let dir = tempfile::tempdir().unwrap();
    let bad = TrainConfig { crop: 128, ..tiny_config() };
    assert!(matches!(train(&bad, &images, dir.path(), |_, _| {}), Err(SnicError::Input(_))));
    assert!(matches!(train(&tiny_config(), &[], dir.path(), |_, _| {}), Err(SnicError::Input(_))));
    let bad = TrainConfig { lambdas: vec![-1.0], ..tiny_config() };
    assert!(bad.validate().is_err());
}
