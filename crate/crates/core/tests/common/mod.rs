//! Shared fixtures for the integration tests.
#![allow(dead_code)]

pub mod metric_oracles;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqg_core::config::{DecoderKind, Dims};
use vqg_core::corpus::{build_vocab, ObjectRegion, Sample, Vocabulary};
use vqg_core::nn::{grad_check, GradCheckOptions, ParamId, ParamStore, Tape, Var};
use vqg_core::{Model, ModelSpec, Result, Tensor, TrainConfig};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

pub fn set(store: &mut ParamStore<f64>, id: ParamId, rows: &[&[f64]]) {
    let t = Tensor::from_rows(rows);
    assert_eq!(store.value(id).shape(), t.shape(), "fixture shape for {}", store.name(id));
    *store.value_mut(id) = t;
}

pub fn zero_all(store: &mut ParamStore<f64>) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (r, c) = store.value(id).shape();
        *store.value_mut(id) = Tensor::zeros(r, c);
    }
}

pub fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
    assert!((a - b).abs() <= tol, "{what}: {a} vs {b} (tol {tol})");
}

pub fn assert_all_close(a: &[f64], b: &[f64], tol: f64, what: &str) {
    assert_eq!(a.len(), b.len(), "{what}: length");
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        assert!((x - y).abs() <= tol, "{what}[{i}]: {x} vs {y} (tol {tol})");
    }
}

/// Max relative error of a central-difference check (asserts it passed).
pub fn grad_ok(store: &ParamStore<f64>, f: impl Fn(&mut Tape<'_, f64>) -> Result<Var>) -> f64 {
    let report = grad_check(store, f, GradCheckOptions::default()).unwrap();
    let worst = report.worst().unwrap();
    assert!(
        report.passed,
        "{} max rel error {:.3e} at {}",
        worst.name, worst.max_rel_error, worst.worst_index
    );
    worst.max_rel_error
}

pub const WORDS: [&str; 12] = [
    "what", "color", "is", "the", "cup", "dog", "left", "red", "blue", "how", "many", "two",
];

pub fn tiny_vocab() -> Vocabulary {
    let q: Vec<String> = WORDS.iter().map(|s| s.to_string()).collect();
    let answers: Vec<Vec<String>> = ["red", "blue", "two", "yes"].iter().map(|a| vec![a.to_string()]).collect();
    let pairs: Vec<(&[String], &[String])> = answers.iter().map(|a| (&q[..], &a[..])).collect();
    build_vocab(pairs, 1).unwrap()
}

/// Small dims so gradient checks stay fast.
pub fn micro_dims() -> Dims {
    Dims {
        word: 4,
        answer: 4,
        embed: 2,
        object: 4,
        latent: 4,
        graph: 4,
        hidden: 4,
        attention: 4,
    }
}

pub fn micro_config(decoder: DecoderKind) -> TrainConfig {
    TrainConfig {
        dims: micro_dims(),
        decoder,
        attention_heads: 2,
        transformer_layers: 1,
        similarity_heads: 2,
        // keep every edge so the graph path carries gradient through the similarity
        epsilon: 0.0,
        ..TrainConfig::default()
    }
}

pub struct Fixture {
    pub image_dim: usize,
    pub object_dim: usize,
    pub cells: usize,
    pub categories: usize,
}

impl Fixture {
    pub const MICRO: Fixture = Fixture {
        image_dim: 3,
        object_dim: 3,
        cells: 2,
        categories: 3,
    };
    pub const SMALL: Fixture = Fixture {
        image_dim: 6,
        object_dim: 5,
        cells: 4,
        categories: 4,
    };

    /// A random sample with `t` objects whose hints are `hints` (cycled).
    pub fn sample(&self, vocab: &Vocabulary, t: usize, hints: &[bool], seed: u64) -> Sample {
        let mut r = rng(seed);
        let objects = (0..t)
            .map(|i| {
                let x0: f32 = r.random_range(0.0..0.5);
                let y0: f32 = r.random_range(0.0..0.5);
                ObjectRegion {
                    feature: (0..self.object_dim).map(|_| r.random_range(-1.0..1.0)).collect(),
                    bbox: [x0, y0, x0 + r.random_range(0.1..0.5), y0 + r.random_range(0.1..0.5)],
                    category_id: r.random_range(0..self.categories),
                    is_hint: hints.is_empty() || hints[i % hints.len()],
                }
            })
            .collect();
        let words = ["what", "color", "is", "the", "cup"];
        let qlen = r.random_range(2..=words.len());
        let answer = ["red", "blue", "two"][r.random_range(0..3)];
        Sample {
            id: format!("fx{seed}"),
            image_id: format!("img{seed}"),
            image_grid: Tensor::from_fn(self.cells, self.image_dim, |_, _| r.random_range(-1.0f32..1.0)),
            objects,
            answer_tokens: vec![vocab.id(answer)],
            question_tokens: words[..qlen].iter().map(|w| vocab.id(w)).collect(),
            answer_class: vocab.answer_class(&[answer.to_string()]).unwrap(),
            template: None,
        }
    }

    pub fn spec(&self, cfg: TrainConfig, vocab: &Vocabulary) -> ModelSpec {
        ModelSpec::new(cfg, vocab, self.categories, self.image_dim, self.object_dim)
    }

    pub fn model(&self, cfg: TrainConfig, vocab: &Vocabulary) -> Model<f64> {
        Model::new(self.spec(cfg, vocab)).unwrap()
    }
}
