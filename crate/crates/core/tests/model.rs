mod common;

use common::*;
use vqg_core::config::{Ablations, DecoderKind};
use vqg_core::model::{total_loss, LossValues};
use vqg_core::nn::Tape;
use vqg_core::{Error, Model, TrainConfig};

fn has(model: &Model<f64>, prefix: &str) -> bool {
    model.store.iter().any(|(_, p)| p.name.starts_with(prefix))
}

fn with(ablation: Ablations) -> TrainConfig {
    TrainConfig {
        ablation,
        ..micro_config(DecoderKind::Lstm)
    }
}

#[test]
fn total_loss_examples() {
    let cfg = TrainConfig::default();
    assert_close(total_loss(1.0, 0.2, 0.3, 0.4, &cfg).unwrap(), 1.0017, 1e-12, "default weights");
    let zero = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        gamma: 0.0,
        ..cfg.clone()
    };
    assert_eq!(total_loss(1.25, 9.0, 9.0, 9.0, &zero).unwrap(), 1.25);
    let no_heads = TrainConfig {
        ablation: Ablations {
            no_pos_ans_heads: true,
            ..Ablations::default()
        },
        ..cfg.clone()
    };
    let w = no_heads.loss_weights();
    assert_eq!((w.beta, w.gamma), (0.0, 0.0));
    assert_close(total_loss(1.0, 0.2, 0.3, 0.4, &no_heads).unwrap(), 1.001, 1e-12, "beta = gamma = 0");
    let nvh = TrainConfig {
        ablation: Ablations {
            no_visual_hints: true,
            ..Ablations::default()
        },
        ..cfg.clone()
    };
    let w = nvh.loss_weights();
    assert_eq!((w.alpha, w.beta, w.gamma), (0.0, 0.001, 0.002));
    match total_loss(1.0, f64::NAN, 0.0, 0.0, &cfg) {
        Err(Error::NonFinite(name)) => assert_eq!(name, "L_vh"),
        other => panic!("expected NonFinite, got {other:?}"),
    }
}

#[test]
fn contradictory_ablations_are_config_errors() {
    let vocab = tiny_vocab();
    let cfg = with(Ablations {
        no_gnn: true,
        gnn_as_transformer: true,
        ..Ablations::default()
    });
    assert!(matches!(Model::<f64>::new(Fixture::MICRO.spec(cfg, &vocab)), Err(Error::Config(_))));
}

#[test]
fn ablations_change_the_parameter_set_as_documented() {
    let vocab = tiny_vocab();
    let build = |ab: Ablations| Fixture::SMALL.model(with(ab), &vocab);
    let full = build(Ablations::default());
    for p in ["answer.gru", "hint.out", "position.out", "answer_head", "graph.gcn0", "dec.graph_attn"] {
        assert!(has(&full, p), "full model lacks {p}");
    }
    assert!(!has(&full, "answer_type") && !has(&full, "objenc"));

    let nvh = build(Ablations {
        no_visual_hints: true,
        ..Ablations::default()
    });
    assert!(!has(&nvh, "hint.") && has(&nvh, "position.out") && has(&nvh, "graph.gcn0"));

    let atype = build(Ablations {
        no_answer_hints_use_answer_type: true,
        ..Ablations::default()
    });
    assert!(has(&atype, "answer_type.embed") && !has(&atype, "answer.") && !has(&atype, "hint."));

    let nognn = build(Ablations {
        no_gnn: true,
        ..Ablations::default()
    });
    assert!(!has(&nognn, "graph") && !has(&nognn, "objenc"));

    let tr = build(Ablations {
        gnn_as_transformer: true,
        ..Ablations::default()
    });
    assert!(!has(&tr, "graph") && has(&tr, "objenc"));

    let heads = build(Ablations {
        no_pos_ans_heads: true,
        ..Ablations::default()
    });
    assert!(!has(&heads, "position.") && !has(&heads, "answer_head") && has(&heads, "hint.out"));

    // the attention mask is a forward-graph change only
    let nva = build(Ablations {
        no_visual_attn: true,
        ..Ablations::default()
    });
    assert_eq!(nva.store.num_scalars(), full.store.num_scalars());
    for m in [&nvh, &atype, &heads] {
        assert!(m.store.num_scalars() < full.store.num_scalars());
    }
}

#[test]
fn no_gnn_passes_node_features_straight_through() {
    let vocab = tiny_vocab();
    let model = Fixture::SMALL.model(
        with(Ablations {
            no_gnn: true,
            ..Ablations::default()
        }),
        &vocab,
    );
    let s = Fixture::SMALL.sample(&vocab, 5, &[true, false], 3);
    let mut t = Tape::new(&model.store);
    let enc = model.encode(&mut t, &s).unwrap();
    assert!(enc.graph.is_none());
    assert_eq!(t.value(enc.encoded).data(), t.value(enc.node_features).data());
}

#[test]
fn no_visual_attn_keeps_the_hint_head_but_not_the_mask() {
    let vocab = tiny_vocab();
    let model = Fixture::SMALL.model(
        with(Ablations {
            no_visual_attn: true,
            ..Ablations::default()
        }),
        &vocab,
    );
    let s = Fixture::SMALL.sample(&vocab, 5, &[true, false, false], 4);
    let out = model.generate(&s, 1).unwrap();
    assert!(out.hint_probs.is_some());
    assert_eq!(out.hint_mask, None);
    let mut t = Tape::new(&model.store);
    let enc = model.encode(&mut t, &s).unwrap();
    assert_eq!(model.decoder_mask(&t, &enc, &s, true), None);

    let full = Fixture::SMALL.model(with(Ablations::default()), &vocab);
    let mut t = Tape::new(&full.store);
    let enc = full.encode(&mut t, &s).unwrap();
    assert_eq!(full.decoder_mask(&t, &enc, &s, true), Some(s.hint_mask()));
}

#[test]
fn reported_total_matches_recombined_components() {
    let vocab = tiny_vocab();
    for decoder in [DecoderKind::Lstm, DecoderKind::Transformer] {
        for ab in [
            Ablations::default(),
            Ablations {
                no_visual_hints: true,
                ..Ablations::default()
            },
            Ablations {
                no_pos_ans_heads: true,
                ..Ablations::default()
            },
        ] {
            let cfg = TrainConfig {
                ablation: ab,
                ..micro_config(decoder)
            };
            let model = Fixture::SMALL.model(cfg.clone(), &vocab);
            for seed in 0..5 {
                let s = Fixture::SMALL.sample(&vocab, 4 + seed as usize % 3, &[false, true, false], seed);
                let mut t = Tape::new(&model.store);
                let vars = model.losses(&mut t, &s).unwrap();
                let v = LossValues::read(&t, &vars);
                for c in [v.ques, v.vh, v.pos, v.ans] {
                    assert!(c >= 0.0);
                }
                let expect = total_loss(v.ques, v.vh, v.pos, v.ans, &cfg).unwrap();
                assert_close(v.total, expect, 1e-6, "recombined total");
            }
        }
    }
}

#[test]
fn total_loss_gradients_for_both_decoders() {
    let vocab = tiny_vocab();
    for decoder in [DecoderKind::Lstm, DecoderKind::Transformer] {
        let model = Fixture::MICRO.model(micro_config(decoder), &vocab);
        let s = Fixture::MICRO.sample(&vocab, 3, &[true, false], 11);
        let err = grad_ok(&model.store, |t| Ok(model.losses(t, &s)?.total));
        assert!(err < 1e-4, "{decoder:?}: {err:e}");
    }
}

#[test]
fn generation_is_bounded_and_deterministic() {
    let vocab = tiny_vocab();
    for decoder in [DecoderKind::Lstm, DecoderKind::Transformer] {
        let model = Fixture::SMALL.model(micro_config(decoder), &vocab);
        let s = Fixture::SMALL.sample(&vocab, 4, &[true, false], 2);
        for width in [1, 3] {
            let a = model.generate(&s, width).unwrap();
            let b = model.generate(&s, width).unwrap();
            assert_eq!(a, b);
            assert!(a.tokens.len() <= 20);
        }
    }
}
