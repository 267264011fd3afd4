//! Answer encoder, object fusion and image-grid pooling.

use crate::error::{Error, Result};
use crate::nn::{Embedding, GruCell, Linear, ParamInit, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AnswerEncoding {
    /// m × F_a recurrent outputs.
    pub words: Var,
    /// 1 × F_a mean over words.
    pub pooled: Var,
}

/// Word embedding followed by a GRU.
#[derive(Clone, Debug)]
pub struct AnswerEncoder {
    pub embedding: Embedding,
    pub gru: GruCell,
}

impl AnswerEncoder {
    pub fn new<S: Scalar>(init: &mut ParamInit<S>, vocab: usize, word_dim: usize, out_dim: usize) -> Self {
        AnswerEncoder {
            embedding: Embedding::new(init, "answer.embed", vocab, word_dim, 0.1),
            gru: GruCell::new(init, "answer.gru", word_dim, out_dim),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, tokens: &[usize]) -> Result<AnswerEncoding> {
        if tokens.is_empty() {
            return Err(Error::Data("answer must contain at least one token".into()));
        }
        let x = self.embedding.forward(tape, tokens)?;
        let words = self.gru.run(tape, x)?;
        let pooled = tape.mean_rows(words);
        Ok(AnswerEncoding { words, pooled })
    }
}

/// Stand-in answer encoder for the answer-type ablation: one embedded row per sample.
#[derive(Clone, Debug)]
pub struct AnswerTypeEncoder {
    pub embedding: Embedding,
}

impl AnswerTypeEncoder {
    pub fn new<S: Scalar>(init: &mut ParamInit<S>, num_types: usize, out_dim: usize) -> Self {
        AnswerTypeEncoder {
            embedding: Embedding::new(init, "answer_type.embed", num_types, out_dim, 0.1),
        }
    }

    pub fn forward<S: Scalar>(&self, tape: &mut Tape<S>, answer_type: usize) -> Result<AnswerEncoding> {
        let words = self.embedding.forward(tape, &[answer_type])?;
        Ok(AnswerEncoding { words, pooled: words })
    }
}

/// ReLU(Linear([feature, Linear(bbox), CategoryEmbedding(category)])).
#[derive(Clone, Debug)]
pub struct ObjectFusion {
    pub position: Linear,
    pub category: Embedding,
    pub proj: Linear,
}

impl ObjectFusion {
    pub fn new<S: Scalar>(
        init: &mut ParamInit<S>,
        feature_dim: usize,
        num_categories: usize,
        embed_dim: usize,
        out_dim: usize,
    ) -> Self {
        ObjectFusion {
            position: Linear::new(init, "object.position", 4, embed_dim, true),
            category: Embedding::new(init, "object.category", num_categories.max(1), embed_dim, 0.1),
            proj: Linear::new(init, "object.proj", feature_dim + 2 * embed_dim, out_dim, true),
        }
    }

    /// `features`: T × F_obj constant, `bboxes`: T × 4 constant.
    pub fn forward<S: Scalar>(
        &self,
        tape: &mut Tape<S>,
        features: Var,
        bboxes: Var,
        categories: &[usize],
    ) -> Result<Var> {
        let p = self.position.forward(tape, bboxes)?;
        let c = self.category.forward(tape, categories)?;
        let x = tape.concat_cols(&[features, p, c])?;
        let y = self.proj.forward(tape, x)?;
        Ok(tape.relu(y))
    }
}

/// Grid rows as a tape constant together with their mean (1 × F_v).
pub fn image_grid<S: Scalar>(tape: &mut Tape<S>, grid: &Tensor<f32>) -> Result<(Var, Var)> {
    if grid.rows() == 0 {
        return Err(Error::Data("image grid has no cells".into()));
    }
    let g = tape.constant(grid.cast());
    let pooled = tape.mean_rows(g);
    Ok((g, pooled))
}
