//! Corpus-level generation metrics (BLEU, ROUGE-L, CIDEr-D) and hint
//! precision/recall/F1. One reference per hypothesis.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type Ngram<'a> = &'a [String];

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Ngram<'_>, usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn check_pairs(hyps: &[Vec<String>], refs: &[Vec<String>], what: &str) -> Result<()> {
    if hyps.is_empty() {
        return Err(Error::Data(format!("{what}: no hypotheses")));
    }
    if hyps.len() != refs.len() {
        return Err(Error::Data(format!(
            "{what}: {} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BleuStats {
    /// Clipped n-gram precisions p_1..p_N.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub score: f64,
}

/// Corpus BLEU: clipped counts summed over the corpus, geometric mean of
/// p_1..p_N, brevity penalty exp(1 - r/c) when c ≤ r. No smoothing.
pub fn bleu_stats(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Result<BleuStats> {
    check_pairs(hyps, refs, "bleu")?;
    let mut matched = vec![0usize; max_n];
    let mut total = vec![0usize; max_n];
    let (mut c, mut r) = (0, 0);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=max_n {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(rf, n);
            for (g, &k) in &hc {
                matched[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    let precisions: Vec<f64> = matched
        .iter()
        .zip(&total)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let brevity_penalty = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let score = if precisions.contains(&0.0) {
        0.0
    } else {
        brevity_penalty * (precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64).exp()
    };
    Ok(BleuStats {
        precisions,
        brevity_penalty,
        hyp_len: c,
        ref_len: r,
        score,
    })
}

pub fn bleu(hyps: &[Vec<String>], refs: &[Vec<String>], max_n: usize) -> Result<f64> {
    Ok(bleu_stats(hyps, refs, max_n)?.score)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

pub const ROUGE_BETA: f64 = 1.2;

/// Sentence ROUGE-L F-measure with β = 1.2.
pub fn rouge_l_sentence(hyp: &[String], reference: &[String]) -> f64 {
    if hyp.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let l = lcs_len(hyp, reference) as f64;
    let p = l / hyp.len() as f64;
    let r = l / reference.len() as f64;
    if p == 0.0 || r == 0.0 {
        return 0.0;
    }
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Mean sentence ROUGE-L over the corpus.
pub fn rouge_l(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_pairs(hyps, refs, "rouge_l")?;
    Ok(hyps.iter().zip(refs).map(|(h, r)| rouge_l_sentence(h, r)).sum::<f64>() / hyps.len() as f64)
}

pub const CIDER_N: usize = 4;
pub const CIDER_SIGMA: f64 = 6.0;

struct TfIdf<'a> {
    vecs: Vec<HashMap<Ngram<'a>, f64>>,
    norms: Vec<f64>,
    /// Number of bigrams, used for the length penalty.
    length: f64,
}

fn tfidf<'a>(tokens: &'a [String], df: &HashMap<Ngram<'_>, f64>, log_docs: f64) -> TfIdf<'a> {
    let mut vecs = Vec::with_capacity(CIDER_N);
    let mut norms = Vec::with_capacity(CIDER_N);
    let mut length = 0.0;
    for n in 1..=CIDER_N {
        let mut v = HashMap::new();
        let mut norm = 0.0;
        for (g, tf) in ngram_counts(tokens, n) {
            let d = df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
            let w = tf as f64 * (log_docs - d);
            norm += w * w;
            v.insert(g, w);
            if n == 2 {
                length += tf as f64;
            }
        }
        vecs.push(v);
        norms.push(norm.sqrt());
    }
    TfIdf { vecs, norms, length }
}

/// CIDEr-D as in the standard caption-evaluation toolkit: tf-idf n-gram
/// vectors (n = 1..4, idf from the reference corpus), clipped dot product,
/// Gaussian length penalty with σ = 6, mean over n, ×10, averaged over samples.
pub fn cider(hyps: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    check_pairs(hyps, refs, "cider")?;
    if refs.len() < 2 {
        return Err(Error::Data("cider needs at least two references for document frequencies".into()));
    }
    let mut df: HashMap<Ngram<'_>, f64> = HashMap::new();
    for r in refs {
        for n in 1..=CIDER_N {
            for g in ngram_counts(r, n).into_keys() {
                *df.entry(g).or_insert(0.0) += 1.0;
            }
        }
    }
    let log_docs = (refs.len() as f64).ln();
    let mut total = 0.0;
    for (h, r) in hyps.iter().zip(refs) {
        let vh = tfidf(h, &df, log_docs);
        let vr = tfidf(r, &df, log_docs);
        let delta = vh.length - vr.length;
        let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
        let mut score = 0.0;
        for n in 0..CIDER_N {
            let mut val = 0.0;
            for (g, &w) in &vh.vecs[n] {
                if let Some(&wr) = vr.vecs[n].get(g) {
                    val += w.min(wr) * wr;
                }
            }
            if vh.norms[n] != 0.0 && vr.norms[n] != 0.0 {
                val /= vh.norms[n] * vr.norms[n];
            }
            score += val * penalty;
        }
        total += score / CIDER_N as f64 * 10.0;
    }
    Ok(total / hyps.len() as f64)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HintScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Micro-averaged over all objects. With no positives anywhere (in either
/// prediction or truth) all three scores are 1.
pub fn hint_f1(pred: &[Vec<bool>], gt: &[Vec<bool>]) -> Result<HintScores> {
    if pred.len() != gt.len() {
        return Err(Error::Data(format!("{} predicted masks vs {} gold masks", pred.len(), gt.len())));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in pred.iter().zip(gt) {
        if p.len() != g.len() {
            return Err(Error::Data("hint mask length mismatch".into()));
        }
        for (&a, &b) in p.iter().zip(g) {
            match (a, b) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
    }
    if tp + fp + fn_ == 0 {
        return Ok(HintScores {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
            ..Default::default()
        });
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(HintScores {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub rouge_l: f64,
    /// `None` when the corpus is too small for document frequencies.
    pub cider: Option<f64>,
    pub hint_precision: Option<f64>,
    pub hint_recall: Option<f64>,
    pub hint_f1: Option<f64>,
    pub samples: usize,
}

impl MetricReport {
    /// Generation metrics, plus hint scores when masks are given.
    pub fn compute(
        hyps: &[Vec<String>],
        refs: &[Vec<String>],
        hints: Option<(&[Vec<bool>], &[Vec<bool>])>,
    ) -> Result<Self> {
        let b = |n| bleu(hyps, refs, n);
        let h = hints.map(|(p, g)| hint_f1(p, g)).transpose()?;
        Ok(MetricReport {
            bleu1: b(1)?,
            bleu2: b(2)?,
            bleu3: b(3)?,
            bleu4: b(4)?,
            rouge_l: rouge_l(hyps, refs)?,
            cider: if refs.len() >= 2 { Some(cider(hyps, refs)?) } else { None },
            hint_precision: h.map(|h| h.precision),
            hint_recall: h.map(|h| h.recall),
            hint_f1: h.map(|h| h.f1),
            samples: hyps.len(),
        })
    }

    /// Fixed-order plain-text table.
    pub fn table(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let rows = [
            ("BLEU-1", format!("{:.4}", self.bleu1)),
            ("BLEU-2", format!("{:.4}", self.bleu2)),
            ("BLEU-3", format!("{:.4}", self.bleu3)),
            ("BLEU-4", format!("{:.4}", self.bleu4)),
            ("ROUGE-L", format!("{:.4}", self.rouge_l)),
            ("CIDEr", opt(self.cider)),
            ("hint-P", opt(self.hint_precision)),
            ("hint-R", opt(self.hint_recall)),
            ("hint-F1", opt(self.hint_f1)),
            ("samples", self.samples.to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k:<8} {v}\n")).collect()
    }
}
