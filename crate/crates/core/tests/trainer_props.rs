mod common;

use coolkws::dataset::{build_task, ingest_corpus};
use coolkws::dsp::DspConfig;
use coolkws::model::{checkpoint_bytes, Arch, Classifier, Gradients, ModelParams};
use coolkws::synth::{vocabulary, write_corpus};
use coolkws::trainer::{adam_step, evaluate, fit, pretrain, AdamState, TrainConfig, TrainingData};
use proptest::prelude::*;

#[test]
fn adam_matches_scalar_recurrence() {
    let arch = Arch::shrunken();
    let mut p = ModelParams::<f64>::init(arch, 4);
    let theta0 = p.values[0];
    let g = Gradients {
        arch,
        values: vec![0.5; arch.param_count()],
    };
    let mut st = AdamState::new(arch);
    let (mut theta, mut m, mut v) = (theta0, 0.0f64, 0.0f64);
    for t in 1..=5 {
        (p, st) = adam_step(&p, &g, &st, 1e-3).unwrap();
        m = 0.9 * m + 0.1 * 0.5;
        v = 0.999 * v + 0.001 * 0.25;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        theta -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        assert!((p.values[0] - theta).abs() < 1e-12, "step {t}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn tiny_adam_step_lowers_batch_loss(seed in any::<u64>()) {
        let mut r = common::rng(seed);
        let p = ModelParams::<f64>::init(Arch::shrunken(), seed);
        let batch: Vec<_> = (0..8).map(|_| (common::random_window(&mut r, 1.0), common::random_label(&mut r))).collect();
        let (l, g) = p.loss_and_grad(&batch).unwrap();
        let (q, _) = adam_step(&p, &g, &AdamState::new(p.arch), 1e-5).unwrap();
        let l2 = q.mean_loss(&batch).unwrap();
        prop_assert!(l2 < l || g.norm() < 1e-8, "{l} -> {l2}");
    }
}

fn small_cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        ..Default::default()
    }
}

#[test]
fn separable_features_are_learned() {
    let train = common::separable(200, 1);
    let val = common::separable(60, 2);
    let out = fit::<f32>(
        Arch::shrunken(),
        &TrainingData::Features(&train),
        &TrainingData::Features(&val),
        &small_cfg(5),
    )
    .unwrap();
    assert!(evaluate(&out.params, &train).unwrap().acc >= 0.95);
}

#[test]
fn early_stopping_returns_best_validation_loss() {
    let train = common::separable(64, 3);
    let mut val = common::separable(32, 4);
    // flip half the validation labels so validation loss eventually rises
    for (i, v) in val.iter_mut().enumerate() {
        if i % 4 == 0 {
            v.1 = if v.1 == coolkws::Label::Target {
                coolkws::Label::NonTarget
            } else {
                coolkws::Label::Target
            };
        }
    }
    let cfg = TrainConfig {
        patience: 2,
        ..small_cfg(12)
    };
    let out = fit::<f32>(
        Arch::shrunken(),
        &TrainingData::Features(&train),
        &TrainingData::Features(&val),
        &cfg,
    )
    .unwrap();
    let best = out.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
    let got = evaluate(&out.params, &val).unwrap().loss;
    assert_eq!(got.to_bits(), best.to_bits());
    assert_eq!(out.history[out.best_epoch - 1].val_loss.to_bits(), best.to_bits());
}

#[test]
fn pretraining_is_bitwise_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &vocabulary(), 15, 7).unwrap();
    let m = ingest_corpus(
        dir.path(),
        Some(&dir.path().join("validation_list.txt")),
        Some(&dir.path().join("testing_list.txt")),
    )
    .unwrap();
    let task = build_task(&m, "rise", 4, 7).unwrap();
    let cfg = TrainConfig {
        seed: 7,
        ..small_cfg(2)
    };
    let a = pretrain(&task, &DspConfig::default(), &cfg, Arch::shrunken()).unwrap();
    let b = pretrain(&task, &DspConfig::default(), &cfg, Arch::shrunken()).unwrap();
    assert_eq!(checkpoint_bytes(&a.params), checkpoint_bytes(&b.params));
    assert_eq!(a.history, b.history);
}
