//! End-to-end corpus construction: render, label, truncate, de-duplicate,
//! build the vocabulary and split by image.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    build_vocab, dedupe_by, generate_scene, label_sample, read_dataset, truncate_question, write_dataset,
    CorpusConfig, EmbeddingTable, RawSample, Renderer, Sample, Vocabulary,
};
use crate::error::{Error, Result};

/// Attempts per question slot before giving up on a scene.
const MAX_RESAMPLE: usize = 20;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub scenes: usize,
    pub rendered: usize,
    pub resampled: usize,
    /// All-false masks from labeling failures.
    pub dropped_no_hint: usize,
    pub dropped_duplicate: usize,
    pub truncated: usize,
    pub kept: usize,
    /// Rendered samples whose self-labeled mask equals the template mask.
    pub label_exact: usize,
    pub label_tp: usize,
    pub label_fp: usize,
    pub label_fn: usize,
}

impl CorpusStats {
    pub fn label_precision(&self) -> f64 {
        ratio(self.label_tp, self.label_tp + self.label_fp)
    }

    pub fn label_recall(&self) -> f64 {
        ratio(self.label_tp, self.label_tp + self.label_fn)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub vocab: Vocabulary,
    pub num_categories: usize,
}

#[derive(Serialize, Deserialize)]
struct CorpusMeta {
    num_categories: usize,
    train: usize,
    dev: usize,
}

impl Corpus {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_dataset(&self.train, &dir.join("train.jsonl"))?;
        write_dataset(&self.dev, &dir.join("dev.jsonl"))?;
        self.vocab.save(&dir.join("vocab.json"))?;
        let meta = CorpusMeta {
            num_categories: self.num_categories,
            train: self.train.len(),
            dev: self.dev.len(),
        };
        std::fs::write(dir.join("corpus.json"), serde_json::to_vec_pretty(&meta)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: CorpusMeta = serde_json::from_slice(&std::fs::read(dir.join("corpus.json"))?)?;
        Ok(Corpus {
            train: read_dataset(&dir.join("train.jsonl"))?,
            dev: read_dataset(&dir.join("dev.jsonl"))?,
            vocab: Vocabulary::load(&dir.join("vocab.json"))?,
            num_categories: meta.num_categories,
        })
    }
}

/// Labels, filters, truncates and de-duplicates raw samples.
fn process(raws: Vec<RawSample>, emb: &EmbeddingTable, mu: f64, seed: u64, stats: &mut CorpusStats) -> Result<Vec<RawSample>> {
    let mut kept = Vec::with_capacity(raws.len());
    for mut raw in raws {
        let outcome = label_sample(&raw, emb, mu)?;
        if raw.template.is_some() {
            let gt = raw.gt_mask();
            stats.label_exact += usize::from(gt == outcome.mask);
            for (&g, &m) in gt.iter().zip(&outcome.mask) {
                match (g, m) {
                    (true, true) => stats.label_tp += 1,
                    (false, true) => stats.label_fp += 1,
                    (true, false) => stats.label_fn += 1,
                    _ => {}
                }
            }
        }
        if outcome.droppable {
            stats.dropped_no_hint += 1;
            continue;
        }
        for (o, m) in raw.objects.iter_mut().zip(outcome.mask) {
            o.is_hint = m;
        }
        if raw.question.len() > super::MAX_QUESTION_LEN {
            stats.truncated += 1;
            raw.question = truncate_question(raw.question);
        }
        kept.push(raw);
    }
    let before = kept.len();
    let kept = dedupe_by(kept, |r| (r.image_id.clone(), r.answer.join(" ")), seed);
    stats.dropped_duplicate += before - kept.len();
    Ok(kept)
}

fn finalize(raws: Vec<RawSample>, num_categories: usize, min_count: usize, dev_fraction: f64, seed: u64) -> Result<Corpus> {
    let vocab = build_vocab(raws.iter().map(|r| (r.question.as_slice(), r.answer.as_slice())), min_count)?;
    let samples = raws
        .into_iter()
        .map(|r| {
            let answer_class = vocab
                .answer_class(&r.answer)
                .ok_or_else(|| Error::Data(format!("answer of {} missing from inventory", r.id)))?;
            let s = Sample {
                question_tokens: vocab.encode(&r.question),
                answer_tokens: vocab.encode(&r.answer),
                id: r.id,
                image_id: r.image_id,
                image_grid: r.image_grid,
                objects: r.objects,
                answer_class,
                template: r.template.map(|t| t.name().to_string()),
            };
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    let (train, dev) = split_by_image(samples, dev_fraction, seed);
    Ok(Corpus {
        train,
        dev,
        vocab,
        num_categories,
    })
}

/// Deterministic corpus for `cfg`.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<(Corpus, CorpusStats)> {
    cfg.validate()?;
    let renderer = Renderer::new(cfg);
    let emb = EmbeddingTable::synthetic(cfg);
    let mut stats = CorpusStats::default();
    let mut kept = Vec::new();
    let mut k: u64 = 0;
    let scene_budget = 100 * cfg.num_samples.max(1) as u64;
    while kept.len() < cfg.num_samples {
        if k >= scene_budget {
            return Err(Error::Config(format!(
                "only {} usable samples after {k} scenes; templates too restrictive",
                kept.len()
            )));
        }
        let scene_seed = cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        k += 1;
        let scene = generate_scene(scene_seed, cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(scene_seed ^ 0x0A5E_0000);
        let mut raws = Vec::new();
        for q in 0..cfg.questions_per_scene {
            for _ in 0..MAX_RESAMPLE {
                match renderer.render_sample(&scene, &cfg.templates, q, &mut rng) {
                    Ok(raw) => {
                        raws.push(raw);
                        break;
                    }
                    Err(_) => stats.resampled += 1,
                }
            }
        }
        stats.scenes += 1;
        stats.rendered += raws.len();
        let mut fresh = process(raws, &emb, cfg.mu, scene_seed, &mut stats)?;
        fresh.truncate(cfg.num_samples - kept.len());
        kept.extend(fresh);
    }
    stats.kept = kept.len();
    let corpus = finalize(kept, cfg.categories.len(), cfg.min_count, cfg.dev_fraction, cfg.seed)?;
    Ok((corpus, stats))
}

/// Labels and packages externally supplied samples.
pub fn prepare_samples(
    raws: Vec<RawSample>,
    emb: &EmbeddingTable,
    mu: f64,
    min_count: usize,
    dev_fraction: f64,
    seed: u64,
) -> Result<(Corpus, CorpusStats)> {
    let mut stats = CorpusStats {
        rendered: raws.len(),
        ..Default::default()
    };
    let num_categories = raws
        .iter()
        .flat_map(|r| r.objects.iter().map(|o| o.category_id + 1))
        .max()
        .unwrap_or(0);
    let kept = process(raws, emb, mu, seed, &mut stats)?;
    stats.kept = kept.len();
    if kept.is_empty() {
        return Err(Error::Data(format!(
            "no samples left: {} of {} dropped without hints, {} duplicates",
            stats.dropped_no_hint, stats.rendered, stats.dropped_duplicate
        )));
    }
    Ok((finalize(kept, num_categories, min_count, dev_fraction, seed)?, stats))
}

/// Splits so that no image contributes to both parts.
pub fn split_by_image(samples: Vec<Sample>, dev_fraction: f64, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let mut images: Vec<&str> = samples
        .iter()
        .map(|s| s.image_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    images.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0xDE5_0000));
    let mut n_dev = (images.len() as f64 * dev_fraction).floor() as usize;
    if n_dev == 0 && dev_fraction > 0.0 && images.len() >= 2 {
        n_dev = 1;
    }
    let dev_ids: BTreeSet<String> = images[..n_dev].iter().map(|s| s.to_string()).collect();
    samples.into_iter().partition(|s| !dev_ids.contains(&s.image_id))
}
