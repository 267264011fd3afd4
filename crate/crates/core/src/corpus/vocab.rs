//! Token vocabulary and answer inventory.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MAX_QUESTION_LEN;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    answers: Vec<String>,
    answer_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    answers: Vec<String>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        Vocabulary::from_parts(f.tokens, f.answers)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            tokens: v.tokens,
            answers: v.answers,
        }
    }
}

impl Vocabulary {
    fn from_parts(tokens: Vec<String>, answers: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let answer_index = answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        Vocabulary {
            tokens,
            index,
            answers,
            answer_index,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn num_answers(&self) -> usize {
        self.answers.len()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn encode(&self, words: &[String]) -> Vec<usize> {
        words.iter().map(|w| self.id(w)).collect()
    }

    /// Words for `ids`, skipping PAD/BOS/EOS.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| !matches!(i, PAD | BOS | EOS))
            .map(|&i| self.token(i).unwrap_or(RESERVED[UNK]).to_string())
            .collect()
    }

    pub fn answer_class(&self, answer: &[String]) -> Option<usize> {
        self.answer_index.get(&answer.join(" ")).copied()
    }

    pub fn answer(&self, class: usize) -> Option<&str> {
        self.answers.get(class).map(String::as_str)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// Builds a vocabulary from (question, answer) word sequences. Tokens seen at
/// least `min_count` times are kept, in alphabetical order after the reserved ids.
/// Every distinct answer string gets a class id.
pub fn build_vocab<'a, I>(texts: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = (&'a [String], &'a [String])>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut answers = BTreeSet::new();
    let mut any = false;
    for (q, a) in texts {
        any = true;
        for w in q.iter().chain(a) {
            *counts.entry(w.as_str()).or_default() += 1;
        }
        answers.insert(a.join(" "));
    }
    if !any {
        return Err(Error::Data("cannot build a vocabulary from an empty corpus".into()));
    }
    let tokens = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(
            counts
                .into_iter()
                .filter(|&(w, c)| c >= min_count && !RESERVED.contains(&w))
                .map(|(w, _)| w.to_string()),
        )
        .collect();
    Ok(Vocabulary::from_parts(tokens, answers.into_iter().collect()))
}

/// Lowercases and splits on whitespace, detaching trailing `?`, `.` and `,`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let w = raw.to_lowercase();
        let body = w.trim_end_matches(['?', '.', ',']);
        if !body.is_empty() {
            out.push(body.to_string());
        }
        out.extend(w[body.len()..].chars().map(String::from));
    }
    out
}

pub fn truncate_question(mut q: Vec<String>) -> Vec<String> {
    q.truncate(MAX_QUESTION_LEN);
    q
}
