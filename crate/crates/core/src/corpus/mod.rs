//! Synthetic scene/question corpus, visual-hint self-labeling, vocabulary and
//! dataset files.

mod dedupe;
mod import;
mod io;
mod labeling;
mod pipeline;
mod render;
mod scene;
mod vocab;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use dedupe::{dedupe_by, dedupe_questions};
pub use import::{import_samples, ImportedObject, ImportedSample};
pub use io::{read_dataset, sidecar_path, write_dataset};
pub use labeling::{label_sample, self_label_hints, EmbeddingTable, LabelOutcome};
pub use pipeline::{build_corpus, prepare_samples, split_by_image, Corpus, CorpusStats};
pub use render::{answer_type, NUM_ANSWER_TYPES, RawSample, Renderer, Resample, SyntheticWorld, TemplateKind};
pub use scene::{generate_scene, SceneObject, SceneSpec, SpatialRelation};
pub use vocab::{build_vocab, tokenize, truncate_question, Vocabulary, BOS, EOS, PAD, UNK};

/// Longest question kept after truncation.
pub const MAX_QUESTION_LEN: usize = 20;

/// One detected or synthesized object region.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectRegion {
    pub feature: Vec<f32>,
    /// (x0, y0, x1, y1), normalized to [0, 1].
    pub bbox: [f32; 4],
    pub category_id: usize,
    pub is_hint: bool,
}

impl ObjectRegion {
    pub fn validate(&self) -> Result<()> {
        let [x0, y0, x1, y1] = self.bbox;
        let in_unit = self.bbox.iter().all(|v| (0.0..=1.0).contains(v));
        if !(in_unit && x0 <= x1 && y0 <= y1) {
            return Err(Error::Data(format!("invalid bbox {:?}", self.bbox)));
        }
        if !self.feature.iter().all(|v| v.is_finite()) {
            return Err(Error::Data("non-finite object feature".into()));
        }
        Ok(())
    }
}

/// One training/evaluation unit.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image_id: String,
    /// c × F_v grid of image cell features.
    pub image_grid: Tensor<f32>,
    pub objects: Vec<ObjectRegion>,
    pub answer_tokens: Vec<usize>,
    pub question_tokens: Vec<usize>,
    pub answer_class: usize,
    /// Template that produced the sample (synthetic data only).
    pub template: Option<String>,
}

impl Sample {
    pub fn hint_mask(&self) -> Vec<bool> {
        self.objects.iter().map(|o| o.is_hint).collect()
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.is_empty() {
            return Err(Error::Data(format!("sample {} has no objects", self.id)));
        }
        if self.answer_tokens.is_empty() {
            return Err(Error::Data(format!("sample {} has an empty answer", self.id)));
        }
        if self.question_tokens.is_empty() || self.question_tokens.len() > MAX_QUESTION_LEN {
            return Err(Error::Data(format!(
                "sample {} question length {} outside 1..={MAX_QUESTION_LEN}",
                self.id,
                self.question_tokens.len()
            )));
        }
        let dim = self.objects[0].feature.len();
        for o in &self.objects {
            o.validate()?;
            if o.feature.len() != dim {
                return Err(Error::Data(format!("sample {} has ragged object features", self.id)));
            }
        }
        Ok(())
    }
}

/// Corpus generation settings (stored as JSON next to a preprocessed dataset).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub seed: u64,
    /// Number of samples kept after labeling and de-duplication.
    pub num_samples: usize,
    pub categories: Vec<String>,
    pub attributes: Vec<String>,
    pub relations: Vec<SpatialRelation>,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Probability that a scene repeats a category with a different attribute.
    pub duplicate_prob: f64,
    /// Image grid is grid_size × grid_size cells.
    pub grid_size: usize,
    pub image_dim: usize,
    pub object_dim: usize,
    pub feature_noise: f64,
    pub questions_per_scene: usize,
    pub templates: Vec<TemplateKind>,
    /// Hint labeling threshold on embedding distance.
    pub mu: f64,
    /// The synthetic word-embedding table is laid out so that the template
    /// ground truth is recovered at this threshold.
    pub embedding_mu: f64,
    pub min_count: usize,
    pub dev_fraction: f64,
}

pub const DEFAULT_CATEGORIES: [&str; 50] = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat", "bench", "bird", "cat",
    "dog", "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella", "handbag", "tie",
    "suitcase", "frisbee", "kite", "bottle", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich",
    "orange", "broccoli", "carrot", "pizza", "donut", "cake", "chair", "couch", "bed", "laptop", "phone", "book",
    "clock", "vase",
];

pub const DEFAULT_ATTRIBUTES: [&str; 10] = [
    "red", "blue", "green", "yellow", "black", "white", "brown", "pink", "purple", "gray",
];

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            seed: 7,
            num_samples: 2000,
            categories: DEFAULT_CATEGORIES.iter().map(|s| s.to_string()).collect(),
            attributes: DEFAULT_ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
            relations: SpatialRelation::ALL.to_vec(),
            min_objects: 4,
            max_objects: 8,
            duplicate_prob: 0.5,
            grid_size: 3,
            image_dim: 64,
            object_dim: 32,
            feature_noise: 0.1,
            questions_per_scene: 3,
            templates: TemplateKind::ALL.to_vec(),
            mu: 5.7,
            embedding_mu: 5.7,
            min_count: 3,
            dev_fraction: 0.1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.categories.is_empty() {
            return bad("empty category taxonomy");
        }
        if self.attributes.len() < 2 {
            return bad("need at least two attributes");
        }
        if self.min_objects == 0 || self.min_objects > self.max_objects {
            return bad("object count range must satisfy 1 <= min <= max");
        }
        if self.templates.is_empty() {
            return bad("no templates enabled");
        }
        if self.grid_size == 0 || self.image_dim == 0 || self.object_dim == 0 {
            return bad("grid and feature dimensions must be positive");
        }
        if !(0.0..=1.0).contains(&self.duplicate_prob) || !(0.0..1.0).contains(&self.dev_fraction) {
            return bad("probabilities must lie in [0, 1)");
        }
        if self.mu < 0.0 || self.embedding_mu <= 0.0 {
            return bad("mu must be nonnegative");
        }
        if self.min_count == 0 {
            return bad("min_count must be >= 1");
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let raw = std::fs::read(path)?;
        let cfg: CorpusConfig = serde_json::from_slice(&raw)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
