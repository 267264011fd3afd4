//! Acceptance criteria. Runs without the libtest harness so every criterion
//! reports exactly one PASS/FAIL line; the process exits non-zero if any fail.
//!
//! `cargo test -p vqg-core --test acceptance -- <filter>` runs the criteria
//! whose number or name contains `<filter>`.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::metric_oracles::*;
use common::*;
use rand::seq::SliceRandom;
use rand::Rng;
use vqg_core::config::{DecoderKind, FocalForm};
use vqg_core::corpus::{build_corpus, Corpus, CorpusConfig, Sample};
use vqg_core::eval::{by_template, generate_records, score_records, GenerationRecord};
use vqg_core::graphnet::{epsilon_sparsify, multihead_cosine, normalized_adjacency, GcnLayer, GraphNet};
use vqg_core::hintnet::visual_hint_loss;
use vqg_core::metrics::{bleu, cider, rouge_l};
use vqg_core::nn::{grad_check, GradCheckOptions, ParamInit, ParamStore, Tape};
use vqg_core::trainer::{train, TrainOptions, Trainer};
use vqg_core::{Model, ModelSpec, Tensor, TrainConfig};

type Outcome = Result<String, String>;
type Criterion = (u32, &'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [Criterion; 9] = [
        (1, "gradients", gradients),
        (2, "focal loss", focal_loss),
        (3, "graph construction", graph_construction),
        (4, "attention and masking", attention_and_masking),
        (5, "metric oracles", metric_oracles),
        (6, "ablation ordering and overfit", ablation_ordering),
        (7, "noise-free labeling", noise_free_labeling),
        (8, "end-to-end determinism", end_to_end_determinism),
        (9, "transformer decoder", transformer_decoder),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if let Some(pat) = &filter {
            if !name.contains(pat.as_str()) && n.to_string() != *pat {
                continue;
            }
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ------------------------------------------------------------ criterion 1

const LOSS_PARTS: [&str; 5] = ["ques", "vh", "pos", "ans", "total"];

/// Worst relative error of a central-difference check per loss component.
fn grad_errors(decoder: DecoderKind, parts: &[&str]) -> Result<Vec<(String, f64)>, String> {
    let vocab = tiny_vocab();
    let model = Fixture::MICRO.model(micro_config(decoder), &vocab);
    let s = Fixture::MICRO.sample(&vocab, 3, &[true, false], 11);
    parts
        .iter()
        .map(|&part| {
            let report = grad_check(
                &model.store,
                |t| {
                    let v = model.losses(t, &s)?;
                    Ok(match part {
                        "ques" => v.ques,
                        "vh" => v.vh.expect("hint head"),
                        "pos" => v.pos.expect("position head"),
                        "ans" => v.ans.expect("answer head"),
                        _ => v.total,
                    })
                },
                GradCheckOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            Ok((part.to_string(), report.worst().map_or(0.0, |w| w.max_rel_error)))
        })
        .collect()
}

fn judge_grads(errors: &[(String, f64)], start: Instant) -> Outcome {
    let detail = errors
        .iter()
        .map(|(n, e)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    let secs = start.elapsed().as_secs_f64();
    ensure!(errors.iter().all(|(_, e)| *e < 1e-4), "max rel error over 1e-4: {detail}");
    ensure!(secs < 60.0, "took {secs:.1}s (limit 60s)");
    Ok(detail)
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut errors = grad_errors(DecoderKind::Lstm, &LOSS_PARTS)?;
    for (n, e) in grad_errors(DecoderKind::Transformer, &["ques"])? {
        errors.push((format!("transformer {n}"), e));
    }
    judge_grads(&errors, start)
}

// ------------------------------------------------------------ criterion 2

fn focal(probs: &[f64], gt: &[bool], eta: f64, lambda: f64, form: FocalForm) -> f64 {
    let store = ParamStore::<f64>::new();
    let mut t = Tape::new(&store);
    let p = t.constant(Tensor::row_vector(probs));
    let l = visual_hint_loss(&mut t, p, gt, eta, lambda, form).unwrap();
    t.scalar(l)
}

fn focal_loss() -> Outcome {
    let fixture = focal(&[0.5, 0.5], &[true, false], 4.0, 2.0, FocalForm::AsPrinted);
    ensure!((fixture - 1.3863).abs() < 1e-4, "fixture gave {fixture}");
    ensure!((fixture - 2.0 * 2f64.ln()).abs() < 1e-6, "fixture gave {fixture}, exact 4·0.5·ln2");

    let mut r = rng(2024);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let t = r.random_range(2..8);
        let probs: Vec<f64> = (0..t).map(|_| r.random_range(0.02..0.98)).collect();
        let mut gt: Vec<bool> = (0..t).map(|_| r.random_bool(0.4)).collect();
        gt[0] = true;
        gt[t - 1] = false;
        let pos: Vec<f64> = probs.iter().zip(&gt).filter(|(_, &g)| g).map(|(p, _)| -p.ln()).collect();
        let neg: Vec<f64> = probs.iter().zip(&gt).filter(|(_, &g)| !g).map(|(p, _)| -(1.0 - p).ln()).collect();
        let bce = pos.iter().sum::<f64>() / pos.len() as f64 + neg.iter().sum::<f64>() / neg.len() as f64;
        for form in [FocalForm::AsPrinted, FocalForm::Standard] {
            worst = worst.max((focal(&probs, &gt, 1.0, 0.0, form) - bce).abs());
        }
    }
    ensure!(worst < 1e-8, "λ=0 η=1 differs from balanced BCE by {worst:e}");
    Ok(format!("fixture {fixture:.6}, max |Δ| vs balanced BCE {worst:.1e}"))
}

// ------------------------------------------------------------ criterion 3

fn value_of(f: impl FnOnce(&mut Tape<'_, f64>) -> vqg_core::nn::Var, store: &ParamStore<f64>) -> Tensor<f64> {
    let mut t = Tape::new(store);
    let v = f(&mut t);
    t.value(v).clone()
}

fn gcn_output(store: &ParamStore<f64>, l: &GcnLayer, x: &Tensor<f64>, adj: &Tensor<f64>) -> Tensor<f64> {
    value_of(
        |t| {
            let (xv, av) = (t.constant(x.clone()), t.constant(adj.clone()));
            let n = normalized_adjacency(t, av).unwrap();
            l.forward(t, xv, n).unwrap()
        },
        store,
    )
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

fn graph_construction() -> Outcome {
    let empty = ParamStore::<f64>::new();
    let cos = value_of(
        |t| {
            let v = t.constant(Tensor::from_rows(&[[1.0, 1.0], [1.0, -1.0]]));
            let w = t.constant(Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]));
            multihead_cosine(t, v, w).unwrap()
        },
        &empty,
    );
    ensure!(cos.get(0, 1).abs() < 1e-12, "two-head cosine fixture gave {}", cos.get(0, 1));

    let r2 = std::f64::consts::SQRT_2;
    let mut store = ParamStore::new();
    let layer = GcnLayer::new(&mut ParamInit::new(&mut store, 1), "gcn", 2, 2);
    set(&mut store, layer.weight.w, &[&[1.0, 0.0], &[0.0, 1.0]]);
    let single = gcn_output(&store, &layer, &Tensor::from_rows(&[[2.0, 0.0]]), &Tensor::zeros(1, 1));
    ensure!(close(single.data(), &[2.0 * r2, 0.0], 1e-12), "single node gave {:?}", single.data());
    let x = Tensor::from_rows(&[[2.0, 0.0], [0.0, 2.0]]);
    let complete = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]);
    let pair = gcn_output(&store, &layer, &x, &complete);
    ensure!(
        close(pair.data(), &[3.0 / r2, 1.0 / r2, 1.0 / r2, 3.0 / r2], 1e-12),
        "two-node graph gave {:?}",
        pair.data()
    );
    set(&mut store, layer.weight.w, &[&[0.0, 0.0], &[0.0, 0.0]]);
    let residual = gcn_output(&store, &layer, &x, &complete);
    ensure!(close(residual.data(), &x.map(|v| v / r2).into_vec(), 1e-12), "W = 0 gave {:?}", residual.data());

    // build_graph + encode commutes with node permutations
    let mut gstore = ParamStore::new();
    let net = GraphNet::new(&mut ParamInit::new(&mut gstore, 5), 3, 5, 4, 3, 2, 0.5);
    let mut r = rng(31);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t = 5;
        let aligned = rand_tensor(&mut r, t, 3).map(|v| v.max(0.0) + 0.01);
        let x = rand_tensor(&mut r, t, 5);
        let mut perm: Vec<usize> = (0..t).collect();
        perm.shuffle(&mut r);
        let run = |a: &Tensor<f64>, x: &Tensor<f64>| {
            value_of(
                |tape| {
                    let (av, xv) = (tape.constant(a.clone()), tape.constant(x.clone()));
                    let g = net.build_graph(tape, av).unwrap();
                    net.encode(tape, xv, g.adjacency).unwrap()
                },
                &gstore,
            )
        };
        let base = run(&aligned, &x);
        let permuted = run(&aligned.select_rows(&perm), &x.select_rows(&perm));
        let expect = base.select_rows(&perm);
        for (a, b) in permuted.data().iter().zip(expect.data()) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure!(worst < 1e-5, "permutation equivariance off by {worst:e}");

    let eps = [0.0, 0.25, 0.5, 0.75, 1.0];
    for _ in 0..20 {
        let v = rand_tensor(&mut r, 6, 4);
        let counts: Vec<usize> = eps
            .iter()
            .map(|&e| {
                let a = value_of(
                    |t| {
                        let vv = t.constant(v.clone());
                        let w = t.constant(Tensor::filled(3, 4, 1.0));
                        let s = multihead_cosine(t, vv, w).unwrap();
                        epsilon_sparsify(t, s, e)
                    },
                    &empty,
                );
                a.data().iter().filter(|&&x| x != 0.0).count()
            })
            .collect();
        ensure!(counts.windows(2).all(|w| w[0] >= w[1]), "nnz not monotone in ε: {counts:?}");
    }
    Ok(format!("hand fixtures exact, equivariance max |Δ| {worst:.1e}, nnz monotone"))
}

// ------------------------------------------------------------ criterion 4

fn row_sums_ok(m: &Tensor<f64>) -> bool {
    (0..m.rows()).all(|i| (m.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-6)
}

fn sum_ok(v: &[f64]) -> bool {
    (v.iter().sum::<f64>() - 1.0).abs() <= 1e-6
}

fn attention_checks(decoder: DecoderKind) -> Outcome {
    let vocab = tiny_vocab();
    let cfg = TrainConfig {
        decoder,
        ..TrainConfig::default()
    };
    let model = Fixture::SMALL.model(cfg, &vocab);
    let mut r = rng(404);
    let mut records = 0;
    for k in 0..50u64 {
        let t = 2 + (k as usize % 5);
        let s = Fixture::SMALL.sample(&vocab, t, &[true, false, true], 500 + k);

        let mut tape = Tape::new(&model.store);
        let enc = model.encode(&mut tape, &s).map_err(|e| e.to_string())?;
        let probs = tape.value(enc.hint.hint_probs.expect("hint head")).clone();
        ensure!(row_sums_ok(&probs), "hint probabilities do not sum to 1 (fixture {k})");
        ensure!(row_sums_ok(tape.value(enc.hint.align_weights)), "alignment rows (fixture {k})");
        ensure!(row_sums_ok(tape.value(enc.hint.topdown_weights)), "top-down rows (fixture {k})");

        let out = model.generate(&s, 1).map_err(|e| e.to_string())?;
        for a in &out.attention {
            ensure!(sum_ok(&a.image) && sum_ok(&a.graph), "decoder attention record (fixture {k})");
            records += 1;
        }

        // nodes outside the mask must not reach the logits
        let mut mask: Vec<bool> = (0..t).map(|_| r.random_bool(0.5)).collect();
        mask[0] = true;
        mask[t - 1] = false;
        let nodes = tape.value(enc.encoded).clone();
        let noisy = Tensor::from_fn(nodes.rows(), nodes.cols(), |i, j| {
            if mask[i] {
                nodes.get(i, j)
            } else {
                nodes.get(i, j) + 1.0 + (k as f64) * 0.37
            }
        });
        let mut inputs = vec![vqg_core::corpus::BOS];
        inputs.extend_from_slice(&s.question_tokens);
        let ctx = model.decoder_context(&enc, Some(&mask));
        let clean = model.arch.decoder.teacher_forced(&mut tape, &ctx, &inputs).map_err(|e| e.to_string())?;
        let mut ctx2 = ctx.clone();
        ctx2.nodes = tape.constant(noisy);
        let dirty = model.arch.decoder.teacher_forced(&mut tape, &ctx2, &inputs).map_err(|e| e.to_string())?;
        ensure!(
            tape.value(clean).data() == tape.value(dirty).data(),
            "perturbing masked nodes changed the logits (fixture {k})"
        );
    }
    Ok(format!("50 fixtures, {records} decoder attention records, masked logits bit-identical"))
}

fn attention_and_masking() -> Outcome {
    attention_checks(DecoderKind::Lstm)
}

// ------------------------------------------------------------ criterion 5

fn random_sentence(r: &mut rand_chacha::ChaCha8Rng, min: usize) -> Vec<String> {
    const POOL: [&str; 7] = ["a", "b", "c", "d", "e", "f", "g"];
    let n = r.random_range(min..min + 7);
    (0..n).map(|_| POOL[r.random_range(0..POOL.len())].to_string()).collect()
}

fn metric_oracles() -> Outcome {
    let mut r = rng(55);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let n = r.random_range(2..7);
        let h: Vec<_> = (0..n).map(|_| random_sentence(&mut r, 1)).collect();
        let refs: Vec<_> = (0..n).map(|_| random_sentence(&mut r, 1)).collect();
        for k in 1..=4 {
            worst = worst.max((bleu(&h, &refs, k).unwrap() - bleu_oracle(&h, &refs, k)).abs());
        }
        let rouge = h.iter().zip(&refs).map(|(a, b)| rouge_oracle(a, b)).sum::<f64>() / n as f64;
        worst = worst.max((rouge_l(&h, &refs).unwrap() - rouge).abs());
        worst = worst.max((cider(&h, &refs).unwrap() - cider_oracle(&h, &refs)).abs());
    }
    ensure!(worst < 1e-6, "metrics differ from the oracles by {worst:e}");
    let same: Vec<_> = (0..20).map(|_| random_sentence(&mut r, 4)).collect();
    let (b4, rl) = (bleu(&same, &same, 4).unwrap(), rouge_l(&same, &same).unwrap());
    ensure!(b4 == 1.0 && (rl - 1.0).abs() < 1e-12, "identical corpora: BLEU@4 {b4}, ROUGE-L {rl}");
    Ok(format!("300 random corpora, max |Δ| {worst:.1e}; identical corpora score 1"))
}

// ------------------------------------------------------------ criterion 6

fn trained(corpus: &Corpus, cfg: TrainConfig) -> Result<(Vec<GenerationRecord>, f64), String> {
    let start = Instant::now();
    let spec = ModelSpec::for_samples(cfg, &corpus.vocab, corpus.num_categories, &corpus.train).map_err(|e| e.to_string())?;
    let mut model = Model::<f32>::new(spec).map_err(|e| e.to_string())?;
    train(&mut model, &corpus.train, &corpus.dev, &TrainOptions::default()).map_err(|e| e.to_string())?;
    let records = generate_records(&model, &corpus.dev, &corpus.vocab, 1).map_err(|e| e.to_string())?;
    Ok((records, start.elapsed().as_secs_f64()))
}

fn template_bleu4(records: &[GenerationRecord], template: &str) -> Result<f64, String> {
    let subset = by_template(records, template);
    ensure!(!subset.is_empty(), "no dev samples for template {template}");
    Ok(score_records(&subset).map_err(|e| e.to_string())?.bleu4)
}

/// Steps of plain training on one sample until teacher-forced L_ques < 0.1.
fn overfit_single(decoder: DecoderKind) -> Outcome {
    let (corpus, _) = build_corpus(&CorpusConfig {
        num_samples: 200,
        ..CorpusConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let s: &Sample = &corpus.train[0];
    let cfg = TrainConfig {
        decoder,
        learning_rate: 1e-3,
        ..TrainConfig::default()
    };
    let spec = ModelSpec::for_samples(cfg, &corpus.vocab, corpus.num_categories, &corpus.train).map_err(|e| e.to_string())?;
    let mut model = Model::<f32>::new(spec).map_err(|e| e.to_string())?;
    let ques = |m: &Model<f32>| {
        let mut t = Tape::new(&m.store);
        let v = m.losses(&mut t, s).unwrap();
        t.scalar(v.ques)
    };
    let start_loss = ques(&model);
    let mut trainer = Trainer::new(&model);
    for step in 1..=1000 {
        trainer.step(&mut model, &[s]).map_err(|e| e.to_string())?;
        let l = ques(&model);
        if l < 0.1 {
            return Ok(format!("L_ques {start_loss:.3} -> {l:.4} in {step} steps"));
        }
    }
    Err(format!("L_ques still {:.4} after 1000 steps", ques(&model)))
}

fn ablation_ordering() -> Outcome {
    let (corpus, _) = build_corpus(&CorpusConfig::default()).map_err(|e| e.to_string())?;
    // The reference learning rate leaves a 30-epoch run underfit on this corpus.
    let base = TrainConfig {
        learning_rate: 1e-3,
        epochs: 30,
        ..TrainConfig::default()
    };
    let mut nvh = base.clone();
    nvh.ablation.no_visual_hints = true;
    let mut nognn = base.clone();
    nognn.ablation.no_gnn = true;

    let (full, t_full) = trained(&corpus, base)?;
    let (no_hints, t_nvh) = trained(&corpus, nvh)?;
    let (no_graph, t_nognn) = trained(&corpus, nognn)?;
    let slowest = t_full.max(t_nvh).max(t_nognn);

    let cd = (template_bleu4(&full, "color_disambiguate")?, template_bleu4(&no_hints, "color_disambiguate")?);
    let rel = (template_bleu4(&full, "relation")?, template_bleu4(&no_graph, "relation")?);
    let ok_a = cd.0 > cd.1 && rel.0 > rel.1;
    let a = format!(
        "(a) {}: color_disambiguate BLEU@4 full {:.4} vs no_visual_hints {:.4}, relation BLEU@4 full {:.4} vs no_gnn {:.4}",
        if ok_a { "ok" } else { "FAIL" },
        cd.0,
        cd.1,
        rel.0,
        rel.1
    );

    let f1 = score_records(&full).map_err(|e| e.to_string())?.hint_f1.unwrap_or(0.0);
    let (pos, total) = full
        .iter()
        .flat_map(|r| &r.hint_gt)
        .fold((0usize, 0usize), |(p, n), &g| (p + g as usize, n + 1));
    let rate = pos as f64 / total as f64;
    let baseline = 2.0 * rate / (1.0 + rate);
    let ok_b = f1 > baseline;
    let b = format!(
        "(b) {}: dev hint F1 {f1:.4} vs all-positive {baseline:.4}",
        if ok_b { "ok" } else { "FAIL" }
    );

    let c = overfit_single(DecoderKind::Lstm);
    let ok_c = c.is_ok();
    let c = format!("(c) {}: {}", if ok_c { "ok" } else { "FAIL" }, c.unwrap_or_else(|e| e));
    let ok_time = slowest < 1800.0;
    let time = format!("slowest run {slowest:.0}s");

    let detail = format!("{a}; {b}; {c}; {time}");
    if ok_a && ok_b && ok_c && ok_time {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ------------------------------------------------------------ criterion 7

fn noise_free_labeling() -> Outcome {
    let (_, stats) = build_corpus(&CorpusConfig {
        feature_noise: 0.0,
        ..CorpusConfig::default()
    })
    .map_err(|e| e.to_string())?;
    ensure!(
        stats.label_exact == stats.rendered && stats.label_fp == 0 && stats.label_fn == 0,
        "exact {}/{} fp {} fn {}",
        stats.label_exact,
        stats.rendered,
        stats.label_fp,
        stats.label_fn
    );
    Ok(format!("{} rendered samples, all self-labeled exactly", stats.rendered))
}

// ------------------------------------------------------------ criterion 8

fn end_to_end_determinism() -> Outcome {
    let run = || -> Result<_, String> {
        let (corpus, _) = build_corpus(&CorpusConfig {
            num_samples: 150,
            ..CorpusConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let cfg = TrainConfig {
            epochs: 4,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let (records, _) = trained(&corpus, cfg)?;
        Ok((score_records(&records).map_err(|e| e.to_string())?, records))
    };
    let (a, ra) = run()?;
    let (b, rb) = run()?;
    ensure!(ra == rb, "generations differ between runs");
    ensure!(a == b, "metric reports differ: {a:?} vs {b:?}");
    Ok(format!("identical reports, BLEU@4 {:.4} over {} dev samples", a.bleu4, a.samples))
}

// ------------------------------------------------------------ criterion 9

fn transformer_decoder() -> Outcome {
    let start = Instant::now();
    let grads = judge_grads(&grad_errors(DecoderKind::Transformer, &LOSS_PARTS)?, start);
    let att = attention_checks(DecoderKind::Transformer);
    let fit = overfit_single(DecoderKind::Transformer);
    let ok = grads.is_ok() && att.is_ok() && fit.is_ok();
    let show = |o: Outcome| match o {
        Ok(d) => format!("ok {d}"),
        Err(d) => format!("FAIL {d}"),
    };
    let detail = format!("grads {}; attention {}; overfit {}", show(grads), show(att), show(fit));
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}
