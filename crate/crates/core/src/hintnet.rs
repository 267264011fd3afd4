//! Multi-task auto-encoder: answer/object alignment, top-down fusion, and the
//! hint, position and answer heads with their losses.

use crate::config::{FocalForm, HintActivation};
use crate::error::{Error, Result};
use crate::nn::{AdditiveAttention, DilatedConv1d, Linear, ParamInit, Tape, Var};
use crate::scalar::Scalar;

/// Clamp applied inside the logarithms of the hint loss.
pub const LOG_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct HintNetDims {
    pub object: usize,
    pub answer: usize,
    pub image: usize,
    pub latent: usize,
    pub attention: usize,
    pub num_answers: usize,
}

/// Which optional heads exist.
#[derive(Clone, Copy, Debug)]
pub struct Heads {
    pub hint: bool,
    pub position: bool,
    pub answer: bool,
}

#[derive(Clone, Debug)]
pub struct AnswerHead {
    pub conv1: DilatedConv1d,
    pub conv2: DilatedConv1d,
    pub out: Linear,
}

impl AnswerHead {
    /// Two dilated convolutions over the object axis, max-pool, linear.
    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, fused: Var) -> Result<Var> {
        let h = self.conv1.forward(tape, fused)?;
        let h = tape.relu(h);
        let h = self.conv2.forward(tape, h)?;
        let h = tape.relu(h);
        let w = tape.max_rows(h);
        self.out.forward(tape, w)
    }
}

#[derive(Clone, Debug)]
pub struct HintNet {
    pub align_object: Linear,
    pub align_answer: Linear,
    pub align_score: Linear,
    pub fuse: Linear,
    pub latent1: Linear,
    pub latent2: Linear,
    pub topdown: AdditiveAttention,
    pub hint_hidden: Option<Linear>,
    pub hint_out: Option<Linear>,
    pub position: Option<Linear>,
    pub answer: Option<AnswerHead>,
    pub activation: HintActivation,
}

#[derive(Clone, Copy, Debug)]
pub struct HintState {
    /// T × m alignment scores.
    pub align: Var,
    /// T × m row-softmax of `align`.
    pub align_weights: Var,
    /// T × F_a aggregated answer rows.
    pub aggregated: Var,
    /// T × F_h aligned object features V̄.
    pub aligned: Var,
    /// T × F_h fused latents Ṽ.
    pub fused: Var,
    /// T × c top-down attention weights.
    pub topdown_weights: Var,
    /// 1 × T hint probabilities.
    pub hint_probs: Option<Var>,
    /// T × 4 predicted boxes.
    pub positions: Option<Var>,
    /// 1 × C answer logits.
    pub answer_logits: Option<Var>,
}

impl HintNet {
    pub fn new<S: Scalar>(init: &mut ParamInit<S>, d: HintNetDims, heads: Heads, activation: HintActivation) -> Self {
        let hint_hidden = heads.hint.then(|| Linear::new(init, "hint.hidden", d.latent, d.latent, true));
        let hint_out = heads.hint.then(|| Linear::new(init, "hint.out", d.latent, 1, true));
        let position = heads.position.then(|| Linear::new(init, "position.out", d.latent, 4, true));
        let answer = heads.answer.then(|| AnswerHead {
            conv1: DilatedConv1d::new(init, "answer_head.conv1", d.latent, d.latent, 1),
            conv2: DilatedConv1d::new(init, "answer_head.conv2", d.latent, d.latent, 2),
            out: Linear::new(init, "answer_head.out", d.latent, d.num_answers, true),
        });
        HintNet {
            align_object: Linear::new(init, "align.object", d.object, d.attention, false),
            align_answer: Linear::new(init, "align.answer", d.answer, d.attention, false),
            align_score: Linear::new(init, "align.score", d.attention, 1, false),
            fuse: Linear::new(init, "align.fuse", d.object + d.answer, d.object + d.answer, true),
            latent1: Linear::new(init, "latent.1", d.object + d.answer, d.latent, true),
            latent2: Linear::new(init, "latent.2", d.latent, d.latent, true),
            topdown: AdditiveAttention::new(init, "topdown", d.latent, d.image, d.attention, d.latent),
            hint_hidden,
            hint_out,
            position,
            answer,
            activation,
        }
    }

    /// S[i, j] = tanh(v_i W_r + a_j W_a) · w, a T × m matrix.
    pub fn align_scores<S: Scalar>(&self, tape: &mut Tape<S>, objects: Var, answer: Var) -> Result<Var> {
        let (t, m) = (tape.shape(objects).0, tape.shape(answer).0);
        let vo = self.align_object.forward(tape, objects)?;
        let ao = self.align_answer.forward(tape, answer)?;
        let pre = tape.pairwise_add(vo, ao)?;
        let act = tape.tanh(pre);
        let s = self.align_score.forward(tape, act)?;
        tape.reshape(s, t, m)
    }

    /// Row softmax of the scores and the weighted answer rows: (α, a′).
    pub fn aggregate_answer<S: Scalar>(&self, tape: &mut Tape<S>, scores: Var, answer: Var) -> Result<(Var, Var)> {
        if tape.shape(answer).0 == 0 {
            return Err(Error::Data("cannot aggregate an empty answer".into()));
        }
        let alpha = tape.softmax_rows(scores);
        let agg = tape.matmul(alpha, answer)?;
        Ok((alpha, agg))
    }

    /// ReLU(Linear([v, a′])).
    pub fn align_fuse<S: Scalar>(&self, tape: &mut Tape<S>, objects: Var, aggregated: Var) -> Result<Var> {
        let x = tape.concat_cols(&[objects, aggregated])?;
        let h = self.fuse.forward(tape, x)?;
        Ok(tape.relu(h))
    }

    /// [`Self::align_fuse`] followed by the two-layer ReLU projection to F_h.
    pub fn fuse_aligned<S: Scalar>(&self, tape: &mut Tape<S>, objects: Var, aggregated: Var) -> Result<Var> {
        let h = self.align_fuse(tape, objects, aggregated)?;
        let h = self.latent1.forward(tape, h)?;
        let h = tape.relu(h);
        let h = self.latent2.forward(tape, h)?;
        Ok(tape.relu(h))
    }

    /// Ṽ = V̄ + attention(V̄ over grid cells). Returns (Ṽ, weights).
    pub fn topdown_fuse<S: Scalar>(&self, tape: &mut Tape<S>, aligned: Var, grid: Var) -> Result<(Var, Var)> {
        let att = self.topdown.forward(tape, aligned, grid)?;
        Ok((tape.add(aligned, att.output)?, att.weights))
    }

    /// 1 × T hint probabilities.
    pub fn predict_hints<S: Scalar>(&self, tape: &mut Tape<S>, fused: Var) -> Result<Option<Var>> {
        let (Some(hidden), Some(out)) = (&self.hint_hidden, &self.hint_out) else {
            return Ok(None);
        };
        let h = hidden.forward(tape, fused)?;
        let h = tape.relu(h);
        let s = out.forward(tape, h)?;
        let s = tape.transpose(s);
        Ok(Some(match self.activation {
            HintActivation::Softmax => tape.softmax_rows(s),
            HintActivation::Sigmoid => tape.sigmoid(s),
        }))
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, objects: Var, answer: Var, grid: Var) -> Result<HintState> {
        let align = self.align_scores(tape, objects, answer)?;
        let (align_weights, aggregated) = self.aggregate_answer(tape, align, answer)?;
        let aligned = self.fuse_aligned(tape, objects, aggregated)?;
        let (fused, topdown_weights) = self.topdown_fuse(tape, aligned, grid)?;
        let hint_probs = self.predict_hints(tape, fused)?;
        let positions = match &self.position {
            Some(p) => Some(p.forward(tape, aligned)?),
            None => None,
        };
        let answer_logits = match &self.answer {
            Some(a) => Some(a.forward(tape, fused)?),
            None => None,
        };
        Ok(HintState {
            align,
            align_weights,
            aggregated,
            aligned,
            fused,
            topdown_weights,
            hint_probs,
            positions,
            answer_logits,
        })
    }
}

/// Balanced focal loss over per-object hint probabilities (1 × T).
///
/// L = -(η/N_pos) Σ_pos f_pos(P) ln P - (η/N_neg) Σ_neg f_neg(P) ln(1-P), where
/// `AsPrinted` uses f_pos = P^λ, f_neg = (1-P)^λ and `Standard` swaps them.
/// A side with no members contributes 0.
pub fn visual_hint_loss<S: Scalar>(
    tape: &mut Tape<S>,
    probs: Var,
    gt: &[bool],
    eta: f64,
    lambda: f64,
    form: FocalForm,
) -> Result<Var> {
    let t = tape.shape(probs).1;
    if gt.len() != t || tape.shape(probs).0 != 1 {
        return Err(Error::shape("visual hint loss", format!("1x{}", gt.len()), format!("{:?}", tape.shape(probs))));
    }
    let pos: Vec<(usize, usize)> = (0..t).filter(|&i| gt[i]).map(|i| (0, i)).collect();
    let neg: Vec<(usize, usize)> = (0..t).filter(|&i| !gt[i]).map(|i| (0, i)).collect();
    let mut terms = Vec::new();
    for (idx, positive) in [(pos, true), (neg, false)] {
        if idx.is_empty() {
            continue;
        }
        let n = idx.len() as f64;
        let p = tape.gather_elems(probs, &idx)?;
        let q = tape.one_minus(p);
        // target-side probability goes into the log; the modulating base depends on the form.
        let (log_arg, base) = match (positive, form) {
            (true, FocalForm::AsPrinted) => (p, p),
            (true, FocalForm::Standard) => (p, q),
            (false, FocalForm::AsPrinted) => (q, q),
            (false, FocalForm::Standard) => (q, p),
        };
        let logp = tape.ln_clamped(log_arg, LOG_EPS);
        let factor = tape.powf(base, lambda);
        let prod = tape.mul(factor, logp)?;
        let s = tape.sum_all(prod);
        terms.push(tape.scale(s, -eta / n));
    }
    Ok(match terms[..] {
        [] => tape.constant(crate::tensor::Tensor::zeros(1, 1)),
        [a] => a,
        [a, b] => tape.add(a, b)?,
        _ => unreachable!(),
    })
}

/// Mean squared error over all objects and coordinates.
pub fn position_loss<S: Scalar>(tape: &mut Tape<S>, pred: Var, target: Var) -> Result<Var> {
    let d = tape.sub(pred, target)?;
    let sq = tape.mul(d, d)?;
    Ok(tape.mean_all(sq))
}

pub fn answer_loss<S: Scalar>(tape: &mut Tape<S>, logits: Var, class: usize) -> Result<Var> {
    tape.cross_entropy(logits, &[class])
}

/// Predicted-hint mask: P(i) ≥ threshold. A 1e-9 slack keeps exactly uniform
/// softmax outputs on the hint side of a 1/T threshold despite rounding.
pub fn binarize_hints(probs: &[f64], threshold: f64) -> Vec<bool> {
    probs.iter().map(|&p| p + 1e-9 >= threshold).collect()
}
