//! Question decoders (two-LSTM and transformer) behind one interface, plus
//! greedy and beam search.

mod lstm;
mod search;
mod transformer;

pub use lstm::{LstmDecoder, LstmScorer, LstmStepState};
pub use search::{beam_search, exhaustive_search, greedy_search, Hypothesis, SearchConfig, Step, StepScorer};
pub use transformer::{TransformerDecoder, TransformerLayer, TransformerOutput, TransformerScorer};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::{Tape, Var};
use crate::scalar::Scalar;

/// Everything a decoder conditions on.
#[derive(Clone, Debug)]
pub struct DecoderContext {
    /// c × F_v image grid.
    pub grid: Var,
    /// 1 × F_v mean of the grid.
    pub grid_mean: Var,
    /// T × F_g encoded graph nodes.
    pub nodes: Var,
    /// Node rows the graph attention may see; `None` means all.
    pub hint_rows: Option<Vec<usize>>,
    /// 1 × F_a pooled answer.
    pub answer: Var,
}

impl DecoderContext {
    /// Rows of the hint mask; an absent or all-false mask falls back to every node.
    pub fn rows_from_mask(mask: Option<&[bool]>) -> Option<Vec<usize>> {
        let rows: Vec<usize> = mask?.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        (!rows.is_empty()).then_some(rows)
    }

    /// The attended node set X_vh.
    pub fn hint_nodes<S: Scalar>(&self, tape: &mut Tape<S>) -> Result<Var> {
        match &self.hint_rows {
            Some(rows) => tape.select_rows(self.nodes, rows),
            None => Ok(self.nodes),
        }
    }
}

/// Per-step attention distributions (image cells, attended graph nodes).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub image: Vec<f64>,
    pub graph: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum QuestionDecoder {
    Lstm(LstmDecoder),
    Transformer(TransformerDecoder),
}

impl QuestionDecoder {
    /// Logits (one row per input token) for teacher-forced `inputs` = [BOS, q_1, ..., q_n].
    pub fn teacher_forced<S: Scalar>(&self, tape: &mut Tape<S>, ctx: &DecoderContext, inputs: &[usize]) -> Result<Var> {
        match self {
            QuestionDecoder::Lstm(d) => Ok(d.teacher_forced(tape, ctx, inputs)?.0),
            QuestionDecoder::Transformer(d) => Ok(d.forward(tape, ctx, inputs)?.logits),
        }
    }

    pub fn search<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        ctx: &DecoderContext,
        width: usize,
        cfg: &SearchConfig,
    ) -> Result<Hypothesis> {
        match self {
            QuestionDecoder::Lstm(d) => {
                let mut scorer = LstmScorer::new(tape, d, ctx)?;
                run_search(&mut scorer, width, cfg)
            }
            QuestionDecoder::Transformer(d) => {
                let mut scorer = TransformerScorer { tape, decoder: d, ctx };
                run_search(&mut scorer, width, cfg)
            }
        }
    }
}

fn run_search<P: StepScorer>(scorer: &mut P, width: usize, cfg: &SearchConfig) -> Result<Hypothesis> {
    if width <= 1 {
        greedy_search(scorer, cfg)
    } else {
        beam_search(scorer, width, cfg)
    }
}

pub(crate) fn log_softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = logits.iter().map(|&x| (x - m).exp()).sum::<f64>().ln() + m;
    logits.iter().map(|&x| x - z).collect()
}
