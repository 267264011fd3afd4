//! Full pipeline: encoders → hint auto-encoder → object graph → decoder.

use serde::{Deserialize, Serialize};

use crate::config::{DecoderKind, HintActivation, HintSource, TrainConfig};
use crate::corpus::{answer_type, Sample, Vocabulary, BOS, EOS, NUM_ANSWER_TYPES};
use crate::decoder::{
    AttentionRecord, DecoderContext, LstmDecoder, QuestionDecoder, SearchConfig, TransformerDecoder,
};
use crate::encoders::{image_grid, AnswerEncoder, AnswerEncoding, AnswerTypeEncoder, ObjectFusion};
use crate::error::{Error, Result};
use crate::graphnet::{node_features, GraphNet, ObjectGraph, ObjectTransformer};
use crate::hintnet::{answer_loss, binarize_hints, position_loss, visual_hint_loss, Heads, HintNet, HintNetDims, HintState};
use crate::nn::{dropout, ParamInit, ParamStore, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Everything needed to rebuild a model's parameter layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub config: TrainConfig,
    pub vocab_size: usize,
    pub num_answers: usize,
    pub num_categories: usize,
    pub image_dim: usize,
    pub object_dim: usize,
    /// Answer type (yes/no, number, other) of each answer class.
    pub answer_types: Vec<usize>,
}

impl ModelSpec {
    pub fn new(config: TrainConfig, vocab: &Vocabulary, num_categories: usize, image_dim: usize, object_dim: usize) -> Self {
        let answer_types = (0..vocab.num_answers())
            .map(|c| {
                let words: Vec<String> = vocab.answer(c).unwrap_or("").split(' ').map(String::from).collect();
                answer_type(&words)
            })
            .collect();
        ModelSpec {
            config,
            vocab_size: vocab.len(),
            num_answers: vocab.num_answers(),
            num_categories,
            image_dim,
            object_dim,
            answer_types,
        }
    }

    /// Dimensions inferred from a non-empty sample list.
    pub fn for_samples(config: TrainConfig, vocab: &Vocabulary, num_categories: usize, samples: &[Sample]) -> Result<Self> {
        let s = samples
            .first()
            .ok_or_else(|| Error::Data("cannot infer feature dims from an empty dataset".into()))?;
        let object_dim = s.objects.first().map_or(0, |o| o.feature.len());
        Ok(Self::new(config, vocab, num_categories, s.image_grid.cols(), object_dim))
    }
}

#[derive(Clone, Debug)]
pub enum AnswerSide {
    Words(AnswerEncoder),
    Type(AnswerTypeEncoder),
}

#[derive(Clone, Debug)]
pub enum NodeEncoder {
    /// X_enc = X.
    Identity,
    Graph(GraphNet),
    Transformer(ObjectTransformer),
}

#[derive(Clone, Debug)]
pub struct Architecture {
    pub answer: AnswerSide,
    pub fusion: ObjectFusion,
    pub hint: HintNet,
    pub nodes: NodeEncoder,
    pub decoder: QuestionDecoder,
}

/// Parameters plus the layer graph that reads them.
#[derive(Clone, Debug)]
pub struct Model<S: Scalar> {
    pub spec: ModelSpec,
    pub store: ParamStore<S>,
    pub arch: Architecture,
}

/// Intermediate results of the encoder side for one sample.
#[derive(Clone, Debug)]
pub struct Encoded {
    pub answer: AnswerEncoding,
    /// T × F_obj fused objects V.
    pub objects: Var,
    pub hint: HintState,
    pub graph: Option<ObjectGraph>,
    /// T × (F_obj + F_h) node features X.
    pub node_features: Var,
    /// T × F_g encoded nodes X_enc.
    pub encoded: Var,
    pub grid: Var,
    pub grid_mean: Var,
}

/// Loss components as tape nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub ques: Var,
    pub vh: Option<Var>,
    pub pos: Option<Var>,
    pub ans: Option<Var>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub total: f64,
    pub ques: f64,
    pub vh: f64,
    pub pos: f64,
    pub ans: f64,
}

impl LossValues {
    pub fn read<S: Scalar>(tape: &Tape<S>, v: &LossVars) -> Self {
        let get = |x: Option<Var>| x.map_or(0.0, |x| tape.scalar(x).as_f64());
        LossValues {
            total: tape.scalar(v.total).as_f64(),
            ques: tape.scalar(v.ques).as_f64(),
            vh: get(v.vh),
            pos: get(v.pos),
            ans: get(v.ans),
        }
    }

    /// Name of the first non-finite component.
    pub fn non_finite(&self) -> Option<&'static str> {
        [
            ("L_ques", self.ques),
            ("L_vh", self.vh),
            ("L_pos", self.pos),
            ("L_ans", self.ans),
            ("L", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

/// L = L_ques + α·L_vh + β·L_pos + γ·L_ans on scalars.
pub fn total_loss(ques: f64, vh: f64, pos: f64, ans: f64, cfg: &TrainConfig) -> Result<f64> {
    for (name, v) in [("L_ques", ques), ("L_vh", vh), ("L_pos", pos), ("L_ans", ans)] {
        if !v.is_finite() {
            return Err(Error::NonFinite(name.into()));
        }
    }
    let w = cfg.loss_weights();
    Ok(ques + w.alpha * vh + w.beta * pos + w.gamma * ans)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub hint_probs: Option<Vec<f64>>,
    /// Mask handed to the decoder (None when the decoder saw every node).
    pub hint_mask: Option<Vec<bool>>,
    pub attention: Vec<AttentionRecord>,
}

impl<S: Scalar> Model<S> {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let cfg = &spec.config;
        cfg.validate()?;
        if spec.num_answers == 0 || spec.vocab_size <= EOS {
            return Err(Error::Config("vocabulary and answer inventory must be non-empty".into()));
        }
        let d = cfg.dims;
        let ab = cfg.ablation;
        let mut store = ParamStore::new();
        let mut init = ParamInit::new(&mut store, cfg.seed);
        let answer = if ab.no_answer_hints_use_answer_type {
            AnswerSide::Type(AnswerTypeEncoder::new(&mut init, NUM_ANSWER_TYPES, d.answer))
        } else {
            AnswerSide::Words(AnswerEncoder::new(&mut init, spec.vocab_size, d.word, d.answer))
        };
        let fusion = ObjectFusion::new(&mut init, spec.object_dim, spec.num_categories, d.embed, d.object);
        let heads = Heads {
            hint: ab.uses_visual_hints(),
            position: !ab.no_pos_ans_heads,
            answer: !ab.no_pos_ans_heads,
        };
        let hint = HintNet::new(
            &mut init,
            HintNetDims {
                object: d.object,
                answer: d.answer,
                image: spec.image_dim,
                latent: d.latent,
                attention: d.attention,
                num_answers: spec.num_answers,
            },
            heads,
            cfg.hint_activation,
        );
        let node_dim = d.object + d.latent;
        let (nodes, enc_dim) = if ab.no_gnn {
            (NodeEncoder::Identity, node_dim)
        } else if ab.gnn_as_transformer {
            let t = ObjectTransformer::new(&mut init, node_dim, d.graph, cfg.attention_heads, cfg.gcn_layers)?;
            (NodeEncoder::Transformer(t), d.graph)
        } else {
            let g = GraphNet::new(
                &mut init,
                d.latent,
                node_dim,
                d.graph,
                cfg.similarity_heads,
                cfg.gcn_layers,
                cfg.epsilon,
            );
            (NodeEncoder::Graph(g), d.graph)
        };
        let decoder = match cfg.decoder {
            DecoderKind::Lstm => QuestionDecoder::Lstm(LstmDecoder::new(
                &mut init,
                spec.vocab_size,
                d.word,
                spec.image_dim,
                enc_dim,
                d.answer,
                d.hidden,
                d.attention,
            )),
            DecoderKind::Transformer => QuestionDecoder::Transformer(TransformerDecoder::new(
                &mut init,
                spec.vocab_size,
                d.word,
                spec.image_dim,
                enc_dim,
                d.answer,
                d.hidden,
                cfg.attention_heads,
                cfg.transformer_layers,
            )?),
        };
        Ok(Model {
            spec,
            store,
            arch: Architecture {
                answer,
                fusion,
                hint,
                nodes,
                decoder,
            },
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.spec.config
    }

    /// Runs everything up to the encoded graph nodes.
    pub fn encode(&self, tape: &mut Tape<S>, sample: &Sample) -> Result<Encoded> {
        if sample.objects.is_empty() {
            return Err(Error::Data(format!("sample {} has no objects", sample.id)));
        }
        let answer = match &self.arch.answer {
            AnswerSide::Words(enc) => enc.forward(tape, &sample.answer_tokens)?,
            AnswerSide::Type(enc) => {
                let ty = *self.spec.answer_types.get(sample.answer_class).ok_or(Error::Index {
                    what: "answer class",
                    index: sample.answer_class,
                    size: self.spec.answer_types.len(),
                })?;
                enc.forward(tape, ty)?
            }
        };
        let t = sample.objects.len();
        let fdim = sample.objects[0].feature.len();
        if fdim != self.spec.object_dim {
            return Err(Error::shape("object features", self.spec.object_dim, fdim));
        }
        let feats = Tensor::<S>::from_fn(t, fdim, |i, j| S::of(sample.objects[i].feature[j] as f64));
        let boxes = Tensor::<S>::from_fn(t, 4, |i, j| S::of(sample.objects[i].bbox[j] as f64));
        let cats: Vec<usize> = sample.objects.iter().map(|o| o.category_id).collect();
        let feats = tape.constant(feats);
        let boxes = tape.constant(boxes);
        let objects = self.arch.fusion.forward(tape, feats, boxes, &cats)?;
        let (grid, grid_mean) = image_grid(tape, &sample.image_grid)?;
        let hint = self.arch.hint.forward(tape, objects, answer.words, grid)?;
        let x = node_features(tape, objects, hint.fused)?;
        let (graph, encoded) = match &self.arch.nodes {
            NodeEncoder::Identity => (None, x),
            NodeEncoder::Graph(g) => {
                let graph = g.build_graph(tape, hint.aligned)?;
                let enc = g.encode(tape, x, graph.adjacency)?;
                (Some(graph), enc)
            }
            NodeEncoder::Transformer(tr) => (None, tr.forward(tape, x)?),
        };
        Ok(Encoded {
            answer,
            objects,
            hint,
            graph,
            node_features: x,
            encoded,
            grid,
            grid_mean,
        })
    }

    fn hint_threshold(&self, t: usize) -> f64 {
        self.config().hint_threshold.unwrap_or(match self.config().hint_activation {
            HintActivation::Softmax => 1.0 / t.max(1) as f64,
            HintActivation::Sigmoid => 0.5,
        })
    }

    /// Binarized hint prediction, if the model has a hint head.
    pub fn predicted_mask(&self, tape: &Tape<S>, enc: &Encoded) -> Option<(Vec<f64>, Vec<bool>)> {
        let probs = tape.value(enc.hint.hint_probs?).to_f64_vec();
        let mask = binarize_hints(&probs, self.hint_threshold(probs.len()));
        Some((probs, mask))
    }

    /// The mask the decoder sees (None = all nodes).
    pub fn decoder_mask(&self, tape: &Tape<S>, enc: &Encoded, sample: &Sample, training: bool) -> Option<Vec<bool>> {
        let ab = self.config().ablation;
        if !ab.uses_visual_hints() || ab.no_visual_attn {
            return None;
        }
        if training && self.config().hint_source == HintSource::GroundTruth {
            return Some(sample.hint_mask());
        }
        self.predicted_mask(tape, enc).map(|(_, m)| m)
    }

    pub fn decoder_context(&self, enc: &Encoded, mask: Option<&[bool]>) -> DecoderContext {
        DecoderContext {
            grid: enc.grid,
            grid_mean: enc.grid_mean,
            nodes: enc.encoded,
            hint_rows: DecoderContext::rows_from_mask(mask),
            answer: enc.answer.pooled,
        }
    }

    /// Teacher-forced question loss plus the auxiliary losses, combined with
    /// the configured weights.
    pub fn losses(&self, tape: &mut Tape<S>, sample: &Sample) -> Result<LossVars> {
        Ok(self.losses_detailed(tape, sample)?.0)
    }

    /// [`Self::losses`] together with the encoder intermediates.
    pub fn losses_detailed(&self, tape: &mut Tape<S>, sample: &Sample) -> Result<(LossVars, Encoded)> {
        self.losses_impl(tape, sample, None::<&mut rand_chacha::ChaCha8Rng>)
    }

    /// [`Self::losses`] for an optimizer step: applies the configured dropout.
    pub fn training_losses<R: rand::Rng>(&self, tape: &mut Tape<S>, sample: &Sample, rng: &mut R) -> Result<LossVars> {
        Ok(self.losses_impl(tape, sample, Some(rng))?.0)
    }

    fn losses_impl<R: rand::Rng>(&self, tape: &mut Tape<S>, sample: &Sample, rng: Option<&mut R>) -> Result<(LossVars, Encoded)> {
        let enc = self.encode(tape, sample)?;
        let mask = self.decoder_mask(tape, &enc, sample, true);
        let mut ctx = self.decoder_context(&enc, mask.as_deref());
        if let Some(rng) = rng {
            let p = self.config().dropout;
            ctx.grid = dropout(tape, ctx.grid, p, rng)?;
            ctx.grid_mean = dropout(tape, ctx.grid_mean, p, rng)?;
            ctx.nodes = dropout(tape, ctx.nodes, p, rng)?;
        }
        let mut inputs = Vec::with_capacity(sample.question_tokens.len() + 1);
        inputs.push(BOS);
        inputs.extend_from_slice(&sample.question_tokens);
        let mut targets = sample.question_tokens.clone();
        targets.push(EOS);
        let logits = self.arch.decoder.teacher_forced(tape, &ctx, &inputs)?;
        let ques = tape.cross_entropy(logits, &targets)?;

        let cfg = self.config();
        let w = cfg.loss_weights();
        let vh = match enc.hint.hint_probs {
            Some(p) => Some(visual_hint_loss(tape, p, &sample.hint_mask(), cfg.eta, cfg.lambda, cfg.focal_form)?),
            None => None,
        };
        let pos = match enc.hint.positions {
            Some(p) => {
                let t = sample.objects.len();
                let gt = Tensor::<S>::from_fn(t, 4, |i, j| S::of(sample.objects[i].bbox[j] as f64));
                let gt = tape.constant(gt);
                Some(position_loss(tape, p, gt)?)
            }
            None => None,
        };
        let ans = match enc.hint.answer_logits {
            Some(l) => Some(answer_loss(tape, l, sample.answer_class)?),
            None => None,
        };
        let mut total = ques;
        for (term, weight) in [(vh, w.alpha), (pos, w.beta), (ans, w.gamma)] {
            if let Some(term) = term {
                if weight != 0.0 {
                    let scaled = tape.scale(term, weight);
                    total = tape.add(total, scaled)?;
                }
            }
        }
        let vars = LossVars {
            total,
            ques,
            vh,
            pos,
            ans,
        };
        Ok((vars, enc))
    }

    /// Decodes a question (greedy when `beam_width` ≤ 1).
    pub fn generate(&self, sample: &Sample, beam_width: usize) -> Result<GenerationOutput> {
        self.generate_with(sample, beam_width, &SearchConfig::for_questions())
    }

    pub fn generate_with(&self, sample: &Sample, beam_width: usize, search: &SearchConfig) -> Result<GenerationOutput> {
        let mut tape = Tape::new(&self.store);
        let enc = self.encode(&mut tape, sample)?;
        let predicted = self.predicted_mask(&tape, &enc);
        let mask = self.decoder_mask(&tape, &enc, sample, false);
        let ctx = self.decoder_context(&enc, mask.as_deref());
        let hyp = self.arch.decoder.search(&mut tape, &ctx, beam_width, search)?;
        Ok(GenerationOutput {
            tokens: hyp.tokens,
            log_prob: hyp.log_prob,
            hint_probs: predicted.map(|(p, _)| p),
            hint_mask: mask,
            attention: hyp.attention,
        })
    }

    /// Per-sample hint probabilities and binarized prediction.
    pub fn predict_hints(&self, sample: &Sample) -> Result<Option<(Vec<f64>, Vec<bool>)>> {
        let mut tape = Tape::new(&self.store);
        let enc = self.encode(&mut tape, sample)?;
        Ok(self.predicted_mask(&tape, &enc))
    }

    /// Learned similarity and adjacency for one sample (graph variant only).
    pub fn adjacency(&self, sample: &Sample) -> Result<Option<(Tensor<f64>, Tensor<f64>)>> {
        let mut tape = Tape::new(&self.store);
        let enc = self.encode(&mut tape, sample)?;
        Ok(enc
            .graph
            .map(|g| (tape.value(g.similarity).cast(), tape.value(g.adjacency).cast())))
    }
}
