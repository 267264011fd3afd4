mod common;

use common::*;
use vqg_core::config::DecoderKind;
use vqg_core::corpus::Sample;
use vqg_core::nn::Tape;
use vqg_core::model::{total_loss, LossValues};
use vqg_core::trainer::{epoch_order, train, Trainer, TrainOptions, BEST_LABEL, CONFIG_FILE, REPORT_FILE};
use vqg_core::{Error, Model, TrainConfig};

fn samples(n: usize, seed: u64) -> Vec<Sample> {
    let vocab = tiny_vocab();
    (0..n)
        .map(|i| Fixture::SMALL.sample(&vocab, 3 + i % 4, &[true, false, false], seed + i as u64))
        .collect()
}

fn small_cfg(lr: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: lr,
        epochs,
        batch_size: 4,
        ..micro_config(DecoderKind::Lstm)
    }
}

fn ques_loss(model: &Model<f64>, s: &Sample) -> f64 {
    let mut t = Tape::new(&model.store);
    let v = model.losses(&mut t, s).unwrap();
    t.scalar(v.ques)
}

#[test]
fn single_sample_overfits_at_desk_dims() {
    let vocab = tiny_vocab();
    for decoder in [DecoderKind::Lstm, DecoderKind::Transformer] {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            decoder,
            ..TrainConfig::default()
        };
        let mut model = Fixture::SMALL.model(cfg, &vocab);
        let s = Fixture::SMALL.sample(&vocab, 5, &[true, false], 1);
        let start = ques_loss(&model, &s);
        let mut trainer = Trainer::new(&model);
        for _ in 0..200 {
            trainer.step(&mut model, &[&s]).unwrap();
        }
        let end = ques_loss(&model, &s);
        assert!(end < start, "{decoder:?}: {end} !< {start}");
    }
}

#[test]
fn same_seed_gives_identical_reports() {
    let data = samples(12, 5);
    let run = || {
        let mut model = Fixture::SMALL.model(small_cfg(1e-3, 2), &tiny_vocab());
        train(&mut model, &data[..9], &data[9..], &TrainOptions::default()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.epochs[0].train.total.to_bits(), b.epochs[0].train.total.to_bits());
    assert_eq!(a.steps, b.steps);
    assert_eq!(epoch_order(9, 1, 1), epoch_order(9, 1, 1));
    assert_ne!(epoch_order(50, 1, 1), epoch_order(50, 1, 2));
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = samples(6, 9);
    let mut model = Fixture::SMALL.model(small_cfg(0.0, 1), &tiny_vocab());
    let before = model.store.clone();
    train(&mut model, &data, &[], &TrainOptions::default()).unwrap();
    for id in before.ids() {
        assert_eq!(before.value(id).data(), model.store.value(id).data(), "{}", before.name(id));
    }
}

#[test]
fn run_directory_contents_and_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = samples(10, 2);
    let mut model = Fixture::SMALL.model(small_cfg(1e-3, 2), &tiny_vocab());
    let opts = TrainOptions {
        run_dir: Some(dir.path().to_path_buf()),
        ..TrainOptions::default()
    };
    let report = train(&mut model, &data[..8], &data[8..], &opts).unwrap();
    assert_eq!(report.epochs.len(), 2);
    assert!((1..=2).contains(&report.best_epoch));
    for f in [CONFIG_FILE, REPORT_FILE] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let ckpts = dir.path().join("checkpoints");
    for label in ["epoch-001", "epoch-002", BEST_LABEL] {
        assert!(ckpts.join(label).is_dir(), "{label}");
    }
    // the model in memory holds the best-dev parameters
    let best: Model<f64> = Model::load(&ckpts.join(BEST_LABEL)).unwrap();
    for id in best.store.ids() {
        assert_eq!(best.store.value(id).data(), model.store.value(id).data());
    }
    let s = &data[9];
    assert_eq!(best.generate(s, 2).unwrap(), model.generate(s, 2).unwrap());

    // reported totals recombine from their components
    let cfg = model.config();
    for step in &report.steps {
        let v: LossValues = *step;
        assert_close(v.total, total_loss(v.ques, v.vh, v.pos, v.ans, cfg).unwrap(), 1e-6, "step total");
    }
}

#[test]
fn non_finite_parameters_abort_training() {
    let data = samples(4, 3);
    let mut model = Fixture::SMALL.model(small_cfg(1e-3, 1), &tiny_vocab());
    let id = model.store.id("dec.out.w").unwrap();
    let (r, c) = model.store.value(id).shape();
    *model.store.value_mut(id) = vqg_core::Tensor::filled(r, c, f64::NAN);
    match train(&mut model, &data, &[], &TrainOptions::default()) {
        Err(Error::NonFinite(what)) => assert!(what.contains("L_ques"), "{what}"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn empty_training_set_is_a_data_error() {
    let mut model = Fixture::SMALL.model(small_cfg(1e-3, 1), &tiny_vocab());
    assert!(matches!(train(&mut model, &[], &[], &TrainOptions::default()), Err(Error::Data(_))));
}

#[test]
fn dropout_is_seeded_and_changes_training() {
    let data = samples(8, 4);
    let run = |p: f64| {
        let cfg = TrainConfig {
            dropout: p,
            ..small_cfg(1e-3, 1)
        };
        let mut model = Fixture::SMALL.model(cfg, &tiny_vocab());
        train(&mut model, &data, &[], &TrainOptions::default()).unwrap()
    };
    let (a, b, none) = (run(0.3), run(0.3), run(0.0));
    assert_eq!(a.steps, b.steps);
    assert_ne!(a.steps, none.steps);
}
