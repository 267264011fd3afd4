//! Decoding a split and scoring the result.

use serde::{Deserialize, Serialize};

use crate::corpus::{Sample, Vocabulary};
use crate::decoder::AttentionRecord;
use crate::error::Result;
use crate::metrics::MetricReport;
use crate::model::Model;
use crate::scalar::Scalar;

/// One decoded sample, as written to a generation dump (one JSON per line).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    #[serde(default)]
    pub template: Option<String>,
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
    #[serde(default)]
    pub log_prob: f64,
    /// Binarized hint-head output (absent for models without a hint head).
    #[serde(default)]
    pub hint_pred: Option<Vec<bool>>,
    #[serde(default)]
    pub hint_gt: Vec<bool>,
    /// Per decoding step; graph weights cover the attended (hint) nodes only.
    #[serde(default)]
    pub attention: Vec<AttentionRecord>,
}

pub fn generate_records<S: Scalar>(
    model: &Model<S>,
    samples: &[Sample],
    vocab: &Vocabulary,
    beam_width: usize,
) -> Result<Vec<GenerationRecord>> {
    samples
        .iter()
        .map(|s| {
            let out = model.generate(s, beam_width)?;
            let hint_pred = model.predict_hints(s)?.map(|(_, m)| m);
            Ok(GenerationRecord {
                id: s.id.clone(),
                template: s.template.clone(),
                hypothesis: vocab.decode(&out.tokens),
                reference: vocab.decode(&s.question_tokens),
                log_prob: out.log_prob,
                hint_pred,
                hint_gt: s.hint_mask(),
                attention: out.attention,
            })
        })
        .collect()
}

/// Generation metrics over `records`; hint scores only when every record
/// carries a prediction.
pub fn score_records(records: &[GenerationRecord]) -> Result<MetricReport> {
    let hyps: Vec<Vec<String>> = records.iter().map(|r| r.hypothesis.clone()).collect();
    let refs: Vec<Vec<String>> = records.iter().map(|r| r.reference.clone()).collect();
    let preds: Option<Vec<Vec<bool>>> = records.iter().map(|r| r.hint_pred.clone()).collect();
    let gold: Vec<Vec<bool>> = records.iter().map(|r| r.hint_gt.clone()).collect();
    MetricReport::compute(&hyps, &refs, preds.as_deref().map(|p| (p, gold.as_slice())))
}

/// Records whose template matches `name`.
pub fn by_template(records: &[GenerationRecord], name: &str) -> Vec<GenerationRecord> {
    records
        .iter()
        .filter(|r| r.template.as_deref() == Some(name))
        .cloned()
        .collect()
}
