//! Model and training configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderKind {
    Lstm,
    Transformer,
}

/// Orientation of the focal modulating factor on positive objects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocalForm {
    /// P^λ on positives, (1-P)^λ on negatives.
    AsPrinted,
    /// (1-P)^λ on positives, P^λ on negatives.
    Standard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintActivation {
    /// Softmax over the objects of a sample.
    Softmax,
    /// Independent per-object sigmoid.
    Sigmoid,
}

/// Which hint mask the decoder sees during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HintSource {
    GroundTruth,
    Predicted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablations {
    /// Remove hint prediction and the decoder's hint mask.
    pub no_visual_hints: bool,
    /// Replace the answer encoder with an answer-type embedding; implies no visual hints.
    pub no_answer_hints_use_answer_type: bool,
    /// Skip graph construction and GCN: the decoder attends over the node features directly.
    pub no_gnn: bool,
    /// Encode objects with a transformer encoder instead of the learned graph.
    pub gnn_as_transformer: bool,
    /// Keep hint prediction but let graph attention see every node.
    pub no_visual_attn: bool,
    /// Remove position and answer heads (β = γ = 0).
    pub no_pos_ans_heads: bool,
}

impl Ablations {
    pub fn validate(&self) -> Result<()> {
        if self.no_gnn && self.gnn_as_transformer {
            return Err(Error::Config(
                "no_gnn and gnn_as_transformer are mutually exclusive".into(),
            ));
        }
        Ok(())
    }

    /// Whether the hint head and decoder mask exist.
    pub fn uses_visual_hints(&self) -> bool {
        !(self.no_visual_hints || self.no_answer_hints_use_answer_type)
    }

    pub fn any(&self) -> bool {
        *self != Ablations::default()
    }
}

/// Layer widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dims {
    pub word: usize,
    /// Answer encoding width F_a.
    pub answer: usize,
    /// Position and category embedding width d.
    pub embed: usize,
    /// Fused object width.
    pub object: usize,
    /// Latent width F_h.
    pub latent: usize,
    /// Encoded graph node width F_g.
    pub graph: usize,
    /// Decoder hidden / model width.
    pub hidden: usize,
    /// Additive-attention width.
    pub attention: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Dims {
            word: 32,
            answer: 32,
            embed: 16,
            object: 32,
            latent: 32,
            graph: 32,
            hidden: 64,
            attention: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub eta: f64,
    pub lambda: f64,
    pub focal_form: FocalForm,
    pub hint_activation: HintActivation,
    pub hint_source: HintSource,
    /// Predicted-hint threshold; `None` means 1/T.
    pub hint_threshold: Option<f64>,
    pub epsilon: f64,
    pub similarity_heads: usize,
    pub gcn_layers: usize,
    pub decoder: DecoderKind,
    pub transformer_layers: usize,
    pub attention_heads: usize,
    pub dims: Dims,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub clip_norm: f64,
    /// Dropout on the decoder's image and graph inputs during training steps.
    pub dropout: f64,
    pub seed: u64,
    pub beam_width: usize,
    /// Stop early if the dev loss has not improved for this many epochs (0 = never).
    pub patience: usize,
    pub ablation: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.005,
            beta: 0.001,
            gamma: 0.001,
            eta: 4.0,
            lambda: 2.0,
            focal_form: FocalForm::AsPrinted,
            hint_activation: HintActivation::Softmax,
            hint_source: HintSource::GroundTruth,
            hint_threshold: None,
            epsilon: 0.75,
            similarity_heads: 3,
            gcn_layers: 2,
            decoder: DecoderKind::Lstm,
            transformer_layers: 2,
            attention_heads: 4,
            dims: Dims::default(),
            learning_rate: 0.0002,
            batch_size: 16,
            epochs: 30,
            clip_norm: 5.0,
            dropout: 0.0,
            seed: 1,
            beam_width: 1,
            patience: 0,
            ablation: Ablations::default(),
        }
    }
}

/// Loss weights after ablation overrides.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(v >= 0.0 && v.is_finite()) {
                problems.push(format!("{name} must be a finite value >= 0"));
            }
        }
        if !(self.eta > 0.0) {
            problems.push("eta must be > 0".into());
        }
        if !(self.lambda >= 0.0) {
            problems.push("lambda must be >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            problems.push("epsilon must lie in [0, 1]".into());
        }
        if self.similarity_heads == 0 {
            problems.push("similarity_heads must be >= 1".into());
        }
        if self.gcn_layers == 0 {
            problems.push("gcn_layers must be >= 1".into());
        }
        if self.transformer_layers == 0 {
            problems.push("transformer_layers must be >= 1".into());
        }
        if self.attention_heads == 0 || !self.dims.hidden.is_multiple_of(self.attention_heads) {
            problems.push("dims.hidden must be divisible by attention_heads".into());
        }
        if self.ablation.gnn_as_transformer && !self.dims.graph.is_multiple_of(self.attention_heads) {
            problems.push("dims.graph must be divisible by attention_heads".into());
        }
        let d = &self.dims;
        if [d.word, d.answer, d.embed, d.object, d.latent, d.graph, d.hidden, d.attention].contains(&0) {
            problems.push("all dims must be positive".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            problems.push("learning_rate must be a finite value >= 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            problems.push("dropout must lie in [0, 1)".into());
        }
        if self.epochs == 0 {
            problems.push("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".into());
        }
        if !(self.clip_norm > 0.0) {
            problems.push("clip_norm must be > 0".into());
        }
        if self.beam_width == 0 {
            problems.push("beam_width must be >= 1".into());
        }
        if let Some(t) = self.hint_threshold {
            if !(0.0..=1.0).contains(&t) {
                problems.push("hint_threshold must lie in [0, 1]".into());
            }
        }
        if let Err(Error::Config(m)) = self.ablation.validate() {
            problems.push(m);
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// α, β, γ with ablation overrides applied.
    pub fn loss_weights(&self) -> LossWeights {
        let mut w = LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        };
        if !self.ablation.uses_visual_hints() {
            w = LossWeights {
                alpha: 0.0,
                beta: 0.001,
                gamma: 0.002,
            };
        }
        if self.ablation.no_pos_ans_heads {
            w.beta = 0.0;
            w.gamma = 0.0;
        }
        w
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path)?;
        let cfg: TrainConfig =
            serde_json::from_slice(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
