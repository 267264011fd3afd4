//! Visual-hint self-labeling by word-embedding distance.

use std::collections::HashMap;
use std::path::Path;

use super::{CorpusConfig, RawSample};
use crate::error::{Error, Result};

/// Word → vector lookup.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, word: impl Into<String>, v: Vec<f64>) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::shape("embedding insert", format!("{}", self.dim), format!("{}", v.len())));
        }
        self.vectors.insert(word.into(), v);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Result<&[f64]> {
        self.vectors
            .get(word)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingEmbedding { word: word.to_string() })
    }

    /// Mean of the word vectors.
    pub fn mean(&self, words: &[String]) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        for w in words {
            for (a, x) in acc.iter_mut().zip(self.get(w)?) {
                *a += x;
            }
        }
        let n = words.len().max(1) as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(acc)
    }

    /// Reads `{"word": [f, ...], ...}`.
    pub fn load_json(path: &Path) -> Result<Self> {
        let raw: HashMap<String, Vec<f64>> = serde_json::from_slice(&std::fs::read(path)?)?;
        let dim = raw.values().next().map_or(0, Vec::len);
        let mut table = EmbeddingTable::new(dim);
        for (w, v) in raw {
            table.insert(w, v)?;
        }
        Ok(table)
    }

    /// Table for the synthetic taxonomy, laid out so that labeling with
    /// `cfg.embedding_mu` reproduces the template hint sets exactly.
    ///
    /// Attributes sit on orthogonal axes `a·e_r`; categories on further axes
    /// `b·e_c` shifted by the attribute centroid. With a² = b² = 2μ²k and
    /// 1 < k < 2n/(2n-1), a bare category mention lands within μ of every
    /// object of that category, while an attribute+category mention only
    /// matches objects carrying both words.
    pub fn synthetic(cfg: &CorpusConfig) -> Self {
        let n = cfg.attributes.len() as f64;
        let k = (1.0 + 2.0 * n / (2.0 * n - 1.0)) / 2.0;
        let scale = (2.0 * cfg.embedding_mu * cfg.embedding_mu * k).sqrt();
        let na = cfg.attributes.len();
        let dim = na + cfg.categories.len();
        let mut table = EmbeddingTable::new(dim);
        for (r, w) in cfg.attributes.iter().enumerate() {
            let mut v = vec![0.0; dim];
            v[r] = scale;
            table.vectors.insert(w.clone(), v);
        }
        for (c, w) in cfg.categories.iter().enumerate() {
            let mut v = vec![scale / n; dim];
            v[na..].iter_mut().for_each(|x| *x = 0.0);
            v[na + c] = scale;
            table.vectors.insert(w.clone(), v);
        }
        table
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `mask[i]` is true iff object i's pooled name embedding lies strictly
/// within `mu` of some pooled noun mention.
pub fn self_label_hints(
    object_words: &[Vec<String>],
    mentions: &[Vec<String>],
    emb: &EmbeddingTable,
    mu: f64,
) -> Result<Vec<bool>> {
    let nouns = mentions.iter().map(|m| emb.mean(m)).collect::<Result<Vec<_>>>()?;
    object_words
        .iter()
        .map(|words| {
            let g = emb.mean(words)?;
            Ok(nouns.iter().any(|n| dist(&g, n) < mu))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelOutcome {
    pub mask: Vec<bool>,
    /// All-false mask that does not come from a genuine no-hint question.
    pub droppable: bool,
}

pub fn label_sample(raw: &RawSample, emb: &EmbeddingTable, mu: f64) -> Result<LabelOutcome> {
    let mask = self_label_hints(&raw.object_words, &raw.mentions, emb, mu)?;
    let droppable = !mask.iter().any(|&m| m) && !raw.genuine_no_hint;
    Ok(LabelOutcome { mask, droppable })
}
