//! JSON-lines dataset manifest with a little-endian f32 feature sidecar.
//!
//! Each sample's sidecar block is a header of four u32 (c, F_v, T, F_obj)
//! followed by the c × F_v image grid and the T × F_obj object features,
//! all row-major.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ObjectRegion, Sample};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    bbox: [f32; 4],
    category_id: usize,
    is_hint: bool,
}

#[derive(Serialize, Deserialize)]
struct FeatureRef {
    offset: u64,
    c: usize,
    f_v: usize,
    t: usize,
    f_obj: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    id: String,
    image_id: String,
    objects: Vec<ObjectRecord>,
    answer_tokens: Vec<usize>,
    question_tokens: Vec<usize>,
    answer_class: usize,
    #[serde(default)]
    template: Option<String>,
    features: FeatureRef,
}

pub fn sidecar_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

fn put_f32s(buf: &mut Vec<u8>, xs: &[f32]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn write_dataset(samples: &[Sample], path: &Path) -> Result<()> {
    let mut manifest = BufWriter::new(std::fs::File::create(path)?);
    let mut blob = Vec::new();
    for s in samples {
        let t = s.objects.len();
        let f_obj = s.objects.first().map_or(0, |o| o.feature.len());
        if s.objects.iter().any(|o| o.feature.len() != f_obj) {
            return Err(Error::Data(format!("sample {} has ragged object features", s.id)));
        }
        let features = FeatureRef {
            offset: blob.len() as u64,
            c: s.image_grid.rows(),
            f_v: s.image_grid.cols(),
            t,
            f_obj,
        };
        for h in [features.c, features.f_v, t, f_obj] {
            blob.extend_from_slice(&(h as u32).to_le_bytes());
        }
        put_f32s(&mut blob, s.image_grid.data());
        for o in &s.objects {
            put_f32s(&mut blob, &o.feature);
        }
        let rec = Record {
            id: s.id.clone(),
            image_id: s.image_id.clone(),
            objects: s
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    bbox: o.bbox,
                    category_id: o.category_id,
                    is_hint: o.is_hint,
                })
                .collect(),
            answer_tokens: s.answer_tokens.clone(),
            question_tokens: s.question_tokens.clone(),
            answer_class: s.answer_class,
            template: s.template.clone(),
            features,
        };
        serde_json::to_writer(&mut manifest, &rec)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    std::fs::write(sidecar_path(path), blob)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    line: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Parse {
                line: self.line,
                msg: format!("feature sidecar truncated at byte {}", self.bytes.len()),
            });
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(n * 4)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push((i + 1, rec));
    }
    if records.is_empty() {
        return Ok(Vec::new());
    }
    let blob = std::fs::read(sidecar_path(path))?;
    records
        .into_iter()
        .map(|(line, rec)| {
            let f = &rec.features;
            let mut cur = Cursor {
                bytes: &blob,
                pos: f.offset as usize,
                line,
            };
            let header = [cur.u32()?, cur.u32()?, cur.u32()?, cur.u32()?];
            if header != [f.c, f.f_v, f.t, f.f_obj] || f.t != rec.objects.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("sidecar header {header:?} disagrees with record"),
                });
            }
            let image_grid = Tensor::from_vec(f.c, f.f_v, cur.f32s(f.c * f.f_v)?)?;
            let objects = rec
                .objects
                .into_iter()
                .map(|o| {
                    Ok(ObjectRegion {
                        feature: cur.f32s(f.f_obj)?,
                        bbox: o.bbox,
                        category_id: o.category_id,
                        is_hint: o.is_hint,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Sample {
                id: rec.id,
                image_id: rec.image_id,
                image_grid,
                objects,
                answer_tokens: rec.answer_tokens,
                question_tokens: rec.question_tokens,
                answer_class: rec.answer_class,
                template: rec.template,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Sample {
        Sample {
            id: "q0".into(),
            image_id: "img0".into(),
            image_grid: Tensor::from_fn(4, 3, |r, c| (r * 3 + c) as f32 * 0.1 - 0.37),
            objects: vec![
                ObjectRegion {
                    feature: vec![1.0e-7, -2.5, f32::MIN_POSITIVE],
                    bbox: [0.1, 0.2, 0.3, 0.4],
                    category_id: 3,
                    is_hint: true,
                },
                ObjectRegion {
                    feature: vec![0.3, 0.7, 1.0 / 3.0],
                    bbox: [0.0, 0.0, 1.0, 1.0],
                    category_id: 0,
                    is_hint: false,
                },
            ],
            answer_tokens: vec![5],
            question_tokens: vec![6, 7, 8],
            answer_class: 2,
            template: Some("count".into()),
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let xs = vec![sample(), Sample { id: "q1".into(), template: None, ..sample() }];
        write_dataset(&xs, &p).unwrap();
        assert_eq!(read_dataset(&p).unwrap(), xs);
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        std::fs::write(&p, "").unwrap();
        assert!(read_dataset(&p).unwrap().is_empty());
    }

    #[test]
    fn missing_objects_is_parse_error_on_line_one() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.jsonl");
        std::fs::write(
            &p,
            r#"{"id":"x","image_id":"i","answer_tokens":[4],"question_tokens":[4],"answer_class":0,"features":{"offset":0,"c":0,"f_v":0,"t":0,"f_obj":0}}"#,
        )
        .unwrap();
        match read_dataset(&p) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 1);
                assert!(msg.contains("objects"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
