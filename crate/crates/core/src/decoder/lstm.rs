//! Hierarchical two-LSTM decoder: a vision LSTM over [Ī, q_t], separate
//! attention over image cells and hint nodes, and a language LSTM.

use super::{log_softmax_row, AttentionRecord, DecoderContext, Step, StepScorer};
use crate::error::Result;
use crate::nn::{AdditiveAttention, Embedding, Linear, LstmCell, LstmState, ParamInit, Tape, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug)]
pub struct LstmDecoder {
    pub embed: Embedding,
    /// ā → [h₁, c₁, h₂, c₂] initial states.
    pub init: Linear,
    pub vision: LstmCell,
    pub image_attn: AdditiveAttention,
    pub graph_attn: AdditiveAttention,
    pub language: LstmCell,
    pub out: Linear,
    pub hidden: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct LstmStepState {
    pub vision: LstmState,
    pub language: LstmState,
}

pub struct LstmStepOut {
    pub logits: Var,
    pub state: LstmStepState,
    /// 1 × c image attention weights.
    pub image_weights: Var,
    /// 1 × |X_vh| graph attention weights.
    pub graph_weights: Var,
}

impl LstmDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        init: &mut ParamInit<S>,
        vocab: usize,
        word_dim: usize,
        image_dim: usize,
        node_dim: usize,
        answer_dim: usize,
        hidden: usize,
        attention: usize,
    ) -> Self {
        LstmDecoder {
            embed: Embedding::new(init, "dec.embed", vocab, word_dim, 0.1),
            init: Linear::new(init, "dec.init", answer_dim, 4 * hidden, true),
            vision: LstmCell::new(init, "dec.vision", image_dim + word_dim, hidden),
            image_attn: AdditiveAttention::new(init, "dec.image_attn", hidden, image_dim, attention, hidden),
            graph_attn: AdditiveAttention::new(init, "dec.graph_attn", hidden, node_dim, attention, hidden),
            language: LstmCell::new(init, "dec.language", 3 * hidden, hidden),
            out: Linear::new(init, "dec.out", hidden, vocab, true),
            hidden,
        }
    }

    /// Both LSTMs start from learned linear maps of ā.
    pub fn initial_state<S: Scalar>(&self, tape: &mut Tape<S>, answer: Var) -> Result<LstmStepState> {
        let z = self.init.forward(tape, answer)?;
        let h = self.hidden;
        Ok(LstmStepState {
            vision: LstmState {
                h: tape.slice_cols(z, 0, h)?,
                c: tape.slice_cols(z, h, h)?,
            },
            language: LstmState {
                h: tape.slice_cols(z, 2 * h, h)?,
                c: tape.slice_cols(z, 3 * h, h)?,
            },
        })
    }

    /// h₁ = LSTM_vision([Ī, q_t], h₁').
    pub fn vision_step<S: Scalar>(&self, tape: &mut Tape<S>, grid_mean: Var, word: Var, state: LstmState) -> Result<LstmState> {
        let x = tape.concat_cols(&[grid_mean, word])?;
        self.vision.step(tape, x, state)
    }

    /// (h_image, h_graph, image weights, graph weights) for query h₁ over the
    /// grid and the attended node rows `hint_nodes`.
    pub fn separate_attention<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        h1: Var,
        grid: Var,
        hint_nodes: Var,
    ) -> Result<(Var, Var, Var, Var)> {
        let img = self.image_attn.forward(tape, h1, grid)?;
        let gr = self.graph_attn.forward(tape, h1, hint_nodes)?;
        Ok((img.output, gr.output, img.weights, gr.weights))
    }

    /// h₂ = LSTM_language([h_image, h_graph, h₁], h₂') and its vocabulary logits.
    pub fn language_step<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        h_image: Var,
        h_graph: Var,
        h1: Var,
        state: LstmState,
    ) -> Result<(Var, LstmState)> {
        let x = tape.concat_cols(&[h_image, h_graph, h1])?;
        let s = self.language.step(tape, x, state)?;
        Ok((self.out.forward(tape, s.h)?, s))
    }

    pub fn step<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        ctx: &DecoderContext,
        hint_nodes: Var,
        state: LstmStepState,
        token: usize,
    ) -> Result<LstmStepOut> {
        let q = self.embed.forward(tape, &[token])?;
        let vision = self.vision_step(tape, ctx.grid_mean, q, state.vision)?;
        let (hi, hg, wi, wg) = self.separate_attention(tape, vision.h, ctx.grid, hint_nodes)?;
        let (logits, language) = self.language_step(tape, hi, hg, vision.h, state.language)?;
        Ok(LstmStepOut {
            logits,
            state: LstmStepState { vision, language },
            image_weights: wi,
            graph_weights: wg,
        })
    }

    /// Teacher-forced logits, one row per input token, and per-step attention.
    pub fn teacher_forced<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        ctx: &DecoderContext,
        inputs: &[usize],
    ) -> Result<(Var, Vec<(Var, Var)>)> {
        let nodes = ctx.hint_nodes(tape)?;
        let mut state = self.initial_state(tape, ctx.answer)?;
        let mut rows = Vec::with_capacity(inputs.len());
        let mut att = Vec::with_capacity(inputs.len());
        for &tok in inputs {
            let out = self.step(tape, ctx, nodes, state, tok)?;
            rows.push(out.logits);
            att.push((out.image_weights, out.graph_weights));
            state = out.state;
        }
        Ok((tape.concat_rows(&rows)?, att))
    }
}

pub struct LstmScorer<'a, 'p, S: Scalar> {
    tape: &'a mut Tape<'p, S>,
    decoder: &'a LstmDecoder,
    ctx: &'a DecoderContext,
    nodes: Var,
}

impl<'a, 'p, S: Scalar> LstmScorer<'a, 'p, S> {
    pub fn new(tape: &'a mut Tape<'p, S>, decoder: &'a LstmDecoder, ctx: &'a DecoderContext) -> Result<Self> {
        let nodes = ctx.hint_nodes(tape)?;
        Ok(LstmScorer { tape, decoder, ctx, nodes })
    }
}

impl<S: Scalar> StepScorer for LstmScorer<'_, '_, S> {
    type State = LstmStepState;

    fn initial(&mut self) -> Result<LstmStepState> {
        self.decoder.initial_state(self.tape, self.ctx.answer)
    }

    fn step(&mut self, state: &LstmStepState, token: usize) -> Result<Step<LstmStepState>> {
        let out = self.decoder.step(self.tape, self.ctx, self.nodes, *state, token)?;
        let logits = self.tape.value(out.logits).to_f64_vec();
        Ok(Step {
            log_probs: log_softmax_row(&logits),
            state: out.state,
            attention: Some(AttentionRecord {
                image: self.tape.value(out.image_weights).to_f64_vec(),
                graph: self.tape.value(out.graph_weights).to_f64_vec(),
            }),
        })
    }
}
