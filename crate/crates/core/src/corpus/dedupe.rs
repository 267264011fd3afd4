//! Keep one question per (image, answer) pair.

use std::collections::HashMap;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Sample;

/// Groups `items` by `key` and keeps one member of each group, chosen with a
/// seeded rng. Survivors keep their original relative order.
pub fn dedupe_by<T, K: Hash + Eq>(items: Vec<T>, key: impl Fn(&T) -> K, seed: u64) -> Vec<T> {
    let mut index: HashMap<K, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, it) in items.iter().enumerate() {
        let g = *index.entry(key(it)).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![false; items.len()];
    for g in &groups {
        keep[g[rng.random_range(0..g.len())]] = true;
    }
    items
        .into_iter()
        .zip(keep)
        .filter_map(|(it, k)| k.then_some(it))
        .collect()
}

pub fn dedupe_questions(samples: Vec<Sample>, seed: u64) -> Vec<Sample> {
    dedupe_by(samples, |s| (s.image_id.clone(), s.answer_tokens.clone()), seed)
}
