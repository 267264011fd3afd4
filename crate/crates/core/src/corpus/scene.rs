use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusConfig;
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialRelation {
    LeftOf,
    RightOf,
    Above,
    Below,
}

impl SpatialRelation {
    pub const ALL: [SpatialRelation; 4] = [Self::LeftOf, Self::RightOf, Self::Above, Self::Below];

    /// Minimum center separation for a relation to hold.
    pub const MARGIN: f32 = 0.15;

    pub fn phrase(self) -> &'static [&'static str] {
        match self {
            Self::LeftOf => &["left", "of"],
            Self::RightOf => &["right", "of"],
            Self::Above => &["above"],
            Self::Below => &["below"],
        }
    }

    /// Whether `subject` stands in this relation to `object`.
    pub fn holds(self, subject: &[f32; 4], object: &[f32; 4]) -> bool {
        let (sx, sy) = center(subject);
        let (ox, oy) = center(object);
        match self {
            Self::LeftOf => sx + Self::MARGIN < ox,
            Self::RightOf => sx > ox + Self::MARGIN,
            Self::Above => sy + Self::MARGIN < oy,
            Self::Below => sy > oy + Self::MARGIN,
        }
    }
}

pub(crate) fn center(b: &[f32; 4]) -> (f32, f32) {
    ((b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub category: usize,
    pub attribute: usize,
    pub bbox: [f32; 4],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub objects: Vec<SceneObject>,
    /// (subject, relation, object) index triples.
    pub relations: Vec<(usize, SpatialRelation, usize)>,
}

impl SceneSpec {
    pub fn count_category(&self, category: usize) -> usize {
        self.objects.iter().filter(|o| o.category == category).count()
    }

    pub fn find(&self, category: usize, attribute: usize) -> Vec<usize> {
        self.objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.category == category && o.attribute == attribute)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Deterministic scene for (seed, cfg).
pub fn generate_scene(seed: u64, cfg: &CorpusConfig) -> Result<SceneSpec> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5CE4_E5EE_D000_0000);
    let t = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let dup_at = (t >= 2 && rng.random_bool(cfg.duplicate_prob)).then(|| rng.random_range(1..t));
    let mut objects = Vec::with_capacity(t);
    for i in 0..t {
        let (category, attribute) = if dup_at == Some(i) {
            let src: &SceneObject = &objects[rng.random_range(0..i)];
            let mut a = rng.random_range(0..cfg.attributes.len() - 1);
            if a >= src.attribute {
                a += 1;
            }
            (src.category, a)
        } else {
            (
                rng.random_range(0..cfg.categories.len()),
                rng.random_range(0..cfg.attributes.len()),
            )
        };
        let w: f32 = rng.random_range(0.1..0.3);
        let h: f32 = rng.random_range(0.1..0.3);
        let x0: f32 = rng.random_range(0.0..(1.0 - w));
        let y0: f32 = rng.random_range(0.0..(1.0 - h));
        objects.push(SceneObject {
            category,
            attribute,
            bbox: [x0, y0, x0 + w, y0 + h],
        });
    }
    let mut relations = Vec::new();
    for (i, a) in objects.iter().enumerate() {
        for (j, b) in objects.iter().enumerate() {
            if i == j {
                continue;
            }
            for &r in &cfg.relations {
                if r.holds(&a.bbox, &b.bbox) {
                    relations.push((i, r, j));
                }
            }
        }
    }
    Ok(SceneSpec {
        seed,
        objects,
        relations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let cfg = CorpusConfig::default();
        assert_eq!(generate_scene(7, &cfg).unwrap(), generate_scene(7, &cfg).unwrap());
        assert_ne!(generate_scene(7, &cfg).unwrap(), generate_scene(8, &cfg).unwrap());
    }

    #[test]
    fn pinned_object_count() {
        let cfg = CorpusConfig {
            min_objects: 3,
            max_objects: 3,
            ..Default::default()
        };
        for s in 0..50 {
            let scene = generate_scene(s, &cfg).unwrap();
            assert_eq!(scene.objects.len(), 3);
            for o in &scene.objects {
                assert!(o.bbox[2] > o.bbox[0] && o.bbox[3] > o.bbox[1]);
                assert!(o.bbox.iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn every_category_appears_across_seeds() {
        let cfg = CorpusConfig {
            categories: ["a", "b", "c", "d"].map(String::from).to_vec(),
            ..Default::default()
        };
        let mut seen = [0usize; 4];
        for s in 0..10_000 {
            for o in generate_scene(s, &cfg).unwrap().objects {
                seen[o.category] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c > 0), "{seen:?}");
    }

    #[test]
    fn relations_reference_valid_objects() {
        let cfg = CorpusConfig::default();
        for s in 0..100 {
            let scene = generate_scene(s, &cfg).unwrap();
            for &(a, r, b) in &scene.relations {
                assert!(a < scene.objects.len() && b < scene.objects.len() && a != b);
                assert!(r.holds(&scene.objects[a].bbox, &scene.objects[b].bbox));
            }
        }
    }

    #[test]
    fn empty_taxonomy_is_a_config_error() {
        let cfg = CorpusConfig {
            categories: vec![],
            ..Default::default()
        };
        assert!(matches!(generate_scene(1, &cfg), Err(crate::Error::Config(_))));
    }
}
