//! Transformer decoder with visual-hint-guided separate attention.
//!
//! Row 0 of the query matrix is the projected pooled answer; rows 1.. are the
//! (BOS-prefixed) question tokens. Each layer runs
//!   Q ← Norm(MSA(Q) + Q)
//!   Q ← Norm(VHSA(Q, I, X_vh) + Q)
//!   Q ← Norm(FF(Q))
//! where VHSA computes Q_img = Norm(MHA(Q, I) + Q), Q_graph = Norm(MHA(Q, X_vh) + Q),
//! Q_all = Q + Q_img + Q_graph and returns Norm(MSA(Q_all) + Q_all). All
//! self-attention is causal. The answer row is dropped before the output layer.

use super::{log_softmax_row, AttentionRecord, DecoderContext, Step, StepScorer};
use crate::corpus::MAX_QUESTION_LEN;
use crate::error::{Error, Result};
use crate::nn::{Embedding, LayerNorm, Linear, MultiHeadAttention, ParamInit, Tape, Var};
use crate::scalar::Scalar;

/// Answer row + BOS + longest question.
pub const MAX_POSITIONS: usize = MAX_QUESTION_LEN + 2;

#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub self_attn: MultiHeadAttention,
    pub norm_self: LayerNorm,
    pub image_attn: MultiHeadAttention,
    pub norm_image: LayerNorm,
    pub graph_attn: MultiHeadAttention,
    pub norm_graph: LayerNorm,
    pub joint_attn: MultiHeadAttention,
    pub norm_joint: LayerNorm,
    pub norm_vhsa: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm_ff: LayerNorm,
}

#[derive(Clone, Debug)]
pub struct TransformerDecoder {
    pub embed: Embedding,
    pub embed_proj: Linear,
    pub answer_proj: Linear,
    pub positions: Embedding,
    pub layers: Vec<TransformerLayer>,
    pub out: Linear,
}

pub struct TransformerOutput {
    /// n × V logits (answer row dropped).
    pub logits: Var,
    /// Per layer: head-wise image and graph cross-attention weights, (n+1) rows each.
    pub cross_attention: Vec<(Vec<Var>, Vec<Var>)>,
}

impl TransformerDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar>(
        init: &mut ParamInit<S>,
        vocab: usize,
        word_dim: usize,
        image_dim: usize,
        node_dim: usize,
        answer_dim: usize,
        model_dim: usize,
        heads: usize,
        n_layers: usize,
    ) -> Result<Self> {
        let layers = (0..n_layers)
            .map(|l| {
                let n = format!("tdec.layer{l}");
                let h = model_dim;
                Ok(TransformerLayer {
                    self_attn: MultiHeadAttention::new(init, &format!("{n}.self"), h, h, h, heads)?,
                    norm_self: LayerNorm::new(init, &format!("{n}.norm_self"), h),
                    image_attn: MultiHeadAttention::new(init, &format!("{n}.image"), h, image_dim, h, heads)?,
                    norm_image: LayerNorm::new(init, &format!("{n}.norm_image"), h),
                    graph_attn: MultiHeadAttention::new(init, &format!("{n}.graph"), h, node_dim, h, heads)?,
                    norm_graph: LayerNorm::new(init, &format!("{n}.norm_graph"), h),
                    joint_attn: MultiHeadAttention::new(init, &format!("{n}.joint"), h, h, h, heads)?,
                    norm_joint: LayerNorm::new(init, &format!("{n}.norm_joint"), h),
                    norm_vhsa: LayerNorm::new(init, &format!("{n}.norm_vhsa"), h),
                    ff1: Linear::new(init, &format!("{n}.ff1"), h, 2 * h, true),
                    ff2: Linear::new(init, &format!("{n}.ff2"), 2 * h, h, true),
                    norm_ff: LayerNorm::new(init, &format!("{n}.norm_ff"), h),
                })
            })
            .collect::<Result<_>>()?;
        Ok(TransformerDecoder {
            embed: Embedding::new(init, "tdec.embed", vocab, word_dim, 0.1),
            embed_proj: Linear::new(init, "tdec.embed_proj", word_dim, model_dim, true),
            answer_proj: Linear::new(init, "tdec.answer_proj", answer_dim, model_dim, true),
            positions: Embedding::new(init, "tdec.positions", MAX_POSITIONS, model_dim, 0.1),
            layers,
            out: Linear::new(init, "tdec.out", model_dim, vocab, true),
        })
    }

    /// One decoder layer on the full query matrix.
    pub fn layer<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        l: &TransformerLayer,
        q: Var,
        grid: Var,
        hint_nodes: Var,
    ) -> Result<(Var, Vec<Var>, Vec<Var>)> {
        let sa = l.self_attn.forward(tape, q, q, true, None)?;
        let r = tape.add(sa.output, q)?;
        let q = l.norm_self.forward(tape, r)?;

        let img = l.image_attn.forward(tape, q, grid, false, None)?;
        let r = tape.add(img.output, q)?;
        let q_img = l.norm_image.forward(tape, r)?;
        let gr = l.graph_attn.forward(tape, q, hint_nodes, false, None)?;
        let r = tape.add(gr.output, q)?;
        let q_graph = l.norm_graph.forward(tape, r)?;
        let q_all = tape.add(q, q_img)?;
        let q_all = tape.add(q_all, q_graph)?;
        let joint = l.joint_attn.forward(tape, q_all, q_all, true, None)?;
        let r = tape.add(joint.output, q_all)?;
        let vhsa = l.norm_joint.forward(tape, r)?;

        let r = tape.add(vhsa, q)?;
        let q = l.norm_vhsa.forward(tape, r)?;
        let f = l.ff1.forward(tape, q)?;
        let f = tape.relu(f);
        let f = l.ff2.forward(tape, f)?;
        let q = l.norm_ff.forward(tape, f)?;
        Ok((q, img.weights, gr.weights))
    }

    /// Logits for every token of `tokens` (BOS first).
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, ctx: &DecoderContext, tokens: &[usize]) -> Result<TransformerOutput> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::Data("transformer decoder needs at least one token".into()));
        }
        if n + 1 > MAX_POSITIONS {
            return Err(Error::shape("transformer positions", format!("<= {MAX_POSITIONS}"), n + 1));
        }
        let a = self.answer_proj.forward(tape, ctx.answer)?;
        let w = self.embed.forward(tape, tokens)?;
        let w = self.embed_proj.forward(tape, w)?;
        let q = tape.concat_rows(&[a, w])?;
        let pos: Vec<usize> = (0..=n).collect();
        let p = self.positions.forward(tape, &pos)?;
        let mut q = tape.add(q, p)?;
        let nodes = ctx.hint_nodes(tape)?;
        let mut cross = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (next, wi, wg) = self.layer(tape, l, q, ctx.grid, nodes)?;
            q = next;
            cross.push((wi, wg));
        }
        let body = tape.slice_rows(q, 1, n)?;
        Ok(TransformerOutput {
            logits: self.out.forward(tape, body)?,
            cross_attention: cross,
        })
    }
}

/// Re-runs the decoder on the whole prefix at every step.
pub struct TransformerScorer<'a, 'p, S: Scalar> {
    pub tape: &'a mut Tape<'p, S>,
    pub decoder: &'a TransformerDecoder,
    pub ctx: &'a DecoderContext,
}

fn last_row_head_mean<S: Scalar>(tape: &Tape<S>, heads: &[Var]) -> Vec<f64> {
    let mut acc: Vec<f64> = Vec::new();
    for &h in heads {
        let t = tape.value(h);
        let row = t.row(t.rows() - 1);
        if acc.is_empty() {
            acc = vec![0.0; row.len()];
        }
        for (a, &x) in acc.iter_mut().zip(row) {
            *a += x.as_f64() / heads.len() as f64;
        }
    }
    acc
}

impl<S: Scalar> StepScorer for TransformerScorer<'_, '_, S> {
    type State = Vec<usize>;

    fn initial(&mut self) -> Result<Vec<usize>> {
        Ok(Vec::new())
    }

    fn step(&mut self, state: &Vec<usize>, token: usize) -> Result<Step<Vec<usize>>> {
        let mut prefix = state.clone();
        prefix.push(token);
        let out = self.decoder.forward(self.tape, self.ctx, &prefix)?;
        let logits = self.tape.value(out.logits);
        let last = logits.row(logits.rows() - 1).iter().map(|x| x.as_f64()).collect::<Vec<_>>();
        let attention = out.cross_attention.last().map(|(wi, wg)| AttentionRecord {
            image: last_row_head_mean(self.tape, wi),
            graph: last_row_head_mean(self.tape, wg),
        });
        Ok(Step {
            log_probs: log_softmax_row(&last),
            state: prefix,
            attention,
        })
    }
}
