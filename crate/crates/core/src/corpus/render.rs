//! Templated question/answer rendering over synthetic scenes.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::scene::{center, SceneSpec, SpatialRelation};
use super::{CorpusConfig, ObjectRegion};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    /// "is there a <attr> <cat> ?" -> yes
    ExistsYes,
    /// "is there a <cat> ?" -> no, for an absent category; has no hint objects.
    ExistsNo,
    /// "how many <cats> are there ?" -> count
    Count,
    /// "what color is the <cat> ?" for a category that occurs once.
    Color,
    /// "what color is the <cat> on the <side> ?" with two same-category objects;
    /// the hint says which one is meant.
    ColorDisambiguate,
    /// "what is <relation> the <attr> <cat> ?" -> category of the related object.
    Relation,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 6] = [
        Self::ExistsYes,
        Self::ExistsNo,
        Self::Count,
        Self::Color,
        Self::ColorDisambiguate,
        Self::Relation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ExistsYes => "exists_yes",
            Self::ExistsNo => "exists_no",
            Self::Count => "count",
            Self::Color => "color",
            Self::ColorDisambiguate => "color_disambiguate",
            Self::Relation => "relation",
        }
    }
}

/// Coarse answer type ("yes/no", "number", "other"), used by the answer-type ablation.
pub fn answer_type(answer: &[String]) -> usize {
    match answer {
        [w] if w == "yes" || w == "no" => 0,
        [w] if w.parse::<f64>().is_ok() => 1,
        _ => 2,
    }
}

pub const NUM_ANSWER_TYPES: usize = 3;

/// Fixed projections that turn (category, attribute, bbox) into features.
#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    category_vecs: Tensor<f64>,
    attribute_vecs: Tensor<f64>,
    bbox_proj: Tensor<f64>,
    image_proj: Tensor<f64>,
}

impl SyntheticWorld {
    pub fn new(cfg: &CorpusConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x3011_D000);
        let mut gauss = |r: usize, c: usize, s: f64| {
            Tensor::from_fn(r, c, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * s
            })
        };
        let d = cfg.object_dim;
        SyntheticWorld {
            category_vecs: gauss(cfg.categories.len(), d, 1.0),
            attribute_vecs: gauss(cfg.attributes.len(), d, 0.8),
            bbox_proj: gauss(4, d, 1.0),
            image_proj: gauss(d, cfg.image_dim, 1.0 / (d as f64).sqrt()),
        }
    }

    /// Noise-free object feature.
    pub fn object_feature(&self, category: usize, attribute: usize, bbox: &[f32; 4]) -> Vec<f64> {
        let d = self.category_vecs.cols();
        (0..d)
            .map(|k| {
                let pos: f64 = (0..4).map(|p| bbox[p] as f64 * self.bbox_proj.get(p, k)).sum();
                self.category_vecs.get(category, k) + self.attribute_vecs.get(attribute, k) + pos
            })
            .collect()
    }
}

/// A rendered question before vocabulary mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSample {
    pub id: String,
    pub image_id: String,
    pub template: Option<TemplateKind>,
    pub question: Vec<String>,
    pub answer: Vec<String>,
    /// Noun mentions of the question/answer; each mention is mean-pooled for labeling.
    pub mentions: Vec<Vec<String>>,
    /// Name words (attribute and category) of each object.
    pub object_words: Vec<Vec<String>>,
    pub image_grid: Tensor<f32>,
    /// Objects with `is_hint` set to the template ground truth.
    pub objects: Vec<ObjectRegion>,
    /// True when the empty hint set is genuine (a negative existence question).
    pub genuine_no_hint: bool,
}

impl RawSample {
    pub fn gt_mask(&self) -> Vec<bool> {
        self.objects.iter().map(|o| o.is_hint).collect()
    }
}

/// Signal that the chosen template cannot be instantiated on this scene.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Resample(pub &'static str);

pub struct Renderer<'c> {
    pub cfg: &'c CorpusConfig,
    pub world: SyntheticWorld,
}

fn plural(word: &str) -> String {
    match word {
        "person" => "people".into(),
        "knife" => "knives".into(),
        "sheep" | "broccoli" => word.into(),
        w if w.ends_with('s') || w.ends_with("ch") || w.ends_with("sh") || w.ends_with('x') => format!("{w}es"),
        w => format!("{w}s"),
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

struct Instance {
    question: String,
    answer: String,
    hints: Vec<usize>,
    mentions: Vec<Vec<String>>,
    genuine_no_hint: bool,
}

impl<'c> Renderer<'c> {
    pub fn new(cfg: &'c CorpusConfig) -> Self {
        Renderer {
            cfg,
            world: SyntheticWorld::new(cfg),
        }
    }

    fn cat(&self, i: usize) -> &str {
        &self.cfg.categories[i]
    }

    fn attr(&self, i: usize) -> &str {
        &self.cfg.attributes[i]
    }

    /// Object regions and image grid for a scene. Noise depends only on the scene seed.
    pub fn render_features(&self, scene: &SceneSpec) -> (Vec<ObjectRegion>, Tensor<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed ^ 0xFEA7_0000);
        let noise = self.cfg.feature_noise;
        let mut base = Vec::with_capacity(scene.objects.len());
        let mut objects = Vec::with_capacity(scene.objects.len());
        for o in &scene.objects {
            let f = self.world.object_feature(o.category, o.attribute, &o.bbox);
            let noisy: Vec<f32> = f
                .iter()
                .map(|&x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (x + noise * z) as f32
                })
                .collect();
            base.push(f);
            objects.push(ObjectRegion {
                feature: noisy,
                bbox: o.bbox,
                category_id: o.category,
                is_hint: false,
            });
        }
        let g = self.cfg.grid_size;
        let fdim = self.cfg.image_dim;
        let mut grid = Tensor::<f32>::zeros(g * g, fdim);
        for gy in 0..g {
            for gx in 0..g {
                let cell = [
                    gx as f32 / g as f32,
                    gy as f32 / g as f32,
                    (gx + 1) as f32 / g as f32,
                    (gy + 1) as f32 / g as f32,
                ];
                let members: Vec<usize> = scene
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(_, o)| overlaps(&o.bbox, &cell))
                    .map(|(i, _)| i)
                    .collect();
                let row = grid.row_mut(gy * g + gx);
                for (k, slot) in row.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for &m in &members {
                        acc += base[m]
                            .iter()
                            .enumerate()
                            .map(|(p, &x)| x * self.world.image_proj.get(p, k))
                            .sum::<f64>();
                    }
                    if !members.is_empty() {
                        acc /= members.len() as f64;
                    }
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *slot = (acc + noise * z) as f32;
                }
            }
        }
        (objects, grid)
    }

    /// Instantiates one template chosen uniformly from `templates`.
    pub fn render_sample(
        &self,
        scene: &SceneSpec,
        templates: &[TemplateKind],
        index: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<RawSample, Resample> {
        let kind = *templates.choose(rng).ok_or(Resample("no templates"))?;
        let inst = self.instantiate(kind, scene, rng)?;
        let (mut objects, image_grid) = self.render_features(scene);
        for &h in &inst.hints {
            objects[h].is_hint = true;
        }
        let object_words = scene
            .objects
            .iter()
            .map(|o| vec![self.attr(o.attribute).to_string(), self.cat(o.category).to_string()])
            .collect();
        Ok(RawSample {
            id: format!("s{}_q{}", scene.seed, index),
            image_id: format!("s{}", scene.seed),
            template: Some(kind),
            question: words(&inst.question),
            answer: words(&inst.answer),
            mentions: inst.mentions,
            object_words,
            image_grid,
            objects,
            genuine_no_hint: inst.genuine_no_hint,
        })
    }

    fn instantiate(&self, kind: TemplateKind, scene: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<Instance, Resample> {
        let objs = &scene.objects;
        let n = objs.len();
        match kind {
            TemplateKind::ExistsYes => {
                let i = rng.random_range(0..n);
                let o = &objs[i];
                Ok(Instance {
                    question: format!("is there a {} {} ?", self.attr(o.attribute), self.cat(o.category)),
                    answer: "yes".into(),
                    hints: scene.find(o.category, o.attribute),
                    mentions: vec![vec![self.attr(o.attribute).into(), self.cat(o.category).into()]],
                    genuine_no_hint: false,
                })
            }
            TemplateKind::ExistsNo => {
                let absent: Vec<usize> = (0..self.cfg.categories.len())
                    .filter(|&c| scene.count_category(c) == 0)
                    .collect();
                let &c = absent.choose(rng).ok_or(Resample("every category present"))?;
                Ok(Instance {
                    question: format!("is there a {} ?", self.cat(c)),
                    answer: "no".into(),
                    hints: vec![],
                    mentions: vec![vec![self.cat(c).into()]],
                    genuine_no_hint: true,
                })
            }
            TemplateKind::Count => {
                let c = objs[rng.random_range(0..n)].category;
                let hints: Vec<usize> = (0..n).filter(|&i| objs[i].category == c).collect();
                Ok(Instance {
                    question: format!("how many {} are there ?", plural(self.cat(c))),
                    answer: hints.len().to_string(),
                    hints,
                    mentions: vec![vec![self.cat(c).into()]],
                    genuine_no_hint: false,
                })
            }
            TemplateKind::Color => {
                let unique: Vec<usize> = (0..n).filter(|&i| scene.count_category(objs[i].category) == 1).collect();
                let &i = unique.choose(rng).ok_or(Resample("no unique category"))?;
                Ok(Instance {
                    question: format!("what color is the {} ?", self.cat(objs[i].category)),
                    answer: self.attr(objs[i].attribute).into(),
                    hints: vec![i],
                    mentions: vec![vec![self.cat(objs[i].category).into()]],
                    genuine_no_hint: false,
                })
            }
            TemplateKind::ColorDisambiguate => {
                let mut pairs = Vec::new();
                for c in 0..self.cfg.categories.len() {
                    let idx: Vec<usize> = (0..n).filter(|&i| objs[i].category == c).collect();
                    if idx.len() == 2 {
                        let (a, b) = (&objs[idx[0]], &objs[idx[1]]);
                        let dx = (center(&a.bbox).0 - center(&b.bbox).0).abs();
                        if a.attribute != b.attribute && dx > SpatialRelation::MARGIN {
                            pairs.push((idx[0], idx[1]));
                        }
                    }
                }
                let &(a, b) = pairs.choose(rng).ok_or(Resample("no same-category pair"))?;
                let (target, other) = if rng.random_bool(0.5) { (a, b) } else { (b, a) };
                let side = if center(&objs[target].bbox).0 < center(&objs[other].bbox).0 {
                    "left"
                } else {
                    "right"
                };
                let o = &objs[target];
                Ok(Instance {
                    question: format!("what color is the {} on the {side} ?", self.cat(o.category)),
                    answer: self.attr(o.attribute).into(),
                    hints: vec![target],
                    mentions: vec![vec![self.attr(o.attribute).into(), self.cat(o.category).into()]],
                    genuine_no_hint: false,
                })
            }
            TemplateKind::Relation => {
                let mut options = Vec::new();
                for a in 0..n {
                    if scene.find(objs[a].category, objs[a].attribute).len() != 1 {
                        continue;
                    }
                    for &r in &self.cfg.relations {
                        let subjects: Vec<usize> = scene
                            .relations
                            .iter()
                            .filter(|&&(_, rr, o)| rr == r && o == a)
                            .map(|&(s, _, _)| s)
                            .collect();
                        if let [j] = subjects[..] {
                            if scene.count_category(objs[j].category) == 1 {
                                options.push((a, r, j));
                            }
                        }
                    }
                }
                let &(a, r, j) = options.choose(rng).ok_or(Resample("no unambiguous relation"))?;
                let anchor = &objs[a];
                Ok(Instance {
                    question: format!(
                        "what is {} the {} {} ?",
                        r.phrase().join(" "),
                        self.attr(anchor.attribute),
                        self.cat(anchor.category)
                    ),
                    answer: self.cat(objs[j].category).into(),
                    hints: vec![a, j],
                    mentions: vec![
                        vec![self.attr(anchor.attribute).into(), self.cat(anchor.category).into()],
                        vec![self.cat(objs[j].category).into()],
                    ],
                    genuine_no_hint: false,
                })
            }
        }
    }
}

fn overlaps(a: &[f32; 4], b: &[f32; 4]) -> bool {
    a[0] < b[2] && b[0] < a[2] && a[1] < b[3] && b[1] < a[3]
}
