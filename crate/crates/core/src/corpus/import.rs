//! Import of precomputed features (e.g. from an external detector).

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{tokenize, ObjectRegion, RawSample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImportedObject {
    pub feature: Vec<f32>,
    pub bbox: [f32; 4],
    pub category_id: usize,
    /// Name words (attributes and category) used for hint labeling.
    pub names: Vec<String>,
}

/// One line of an import file. `nouns` lists the noun mentions of the
/// question and answer; each mention may span several words.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ImportedSample {
    pub id: String,
    pub image_id: String,
    pub question: String,
    pub answer: String,
    pub nouns: Vec<Vec<String>>,
    pub image_grid: Vec<Vec<f32>>,
    pub objects: Vec<ImportedObject>,
}

impl ImportedSample {
    fn into_raw(self, line: usize) -> Result<RawSample> {
        let parse = |msg: String| Error::Parse { line, msg };
        let cols = self.image_grid.first().map_or(0, Vec::len);
        if self.image_grid.iter().any(|r| r.len() != cols) {
            return Err(parse("ragged image_grid".into()));
        }
        let flat = self.image_grid.concat();
        let image_grid = Tensor::from_vec(self.image_grid.len(), cols, flat)?;
        let object_words = self.objects.iter().map(|o| o.names.clone()).collect();
        let objects = self
            .objects
            .into_iter()
            .map(|o| ObjectRegion {
                feature: o.feature,
                bbox: o.bbox,
                category_id: o.category_id,
                is_hint: false,
            })
            .collect::<Vec<_>>();
        for o in &objects {
            o.validate().map_err(|e| parse(e.to_string()))?;
        }
        Ok(RawSample {
            id: self.id,
            image_id: self.image_id,
            template: None,
            question: tokenize(&self.question),
            answer: tokenize(&self.answer),
            mentions: self.nouns,
            object_words,
            image_grid,
            objects,
            // Without template metadata an empty hint set cannot be told apart
            // from a labeling failure.
            genuine_no_hint: false,
        })
    }
}

/// Reads a JSON-lines import file into unlabeled raw samples.
pub fn import_samples(path: &Path) -> Result<Vec<RawSample>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImportedSample = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec.into_raw(i + 1)?);
    }
    Ok(out)
}
