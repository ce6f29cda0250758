//! Auxiliary per-document embeddings used only to retrieve candidate
//! related documents: averaged entity vectors, a sign vector from the image
//! hash, and averaged title-token vectors.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    Entity,
    Image,
    Text,
}

impl Space {
    pub const ALL: [Space; 3] = [Space::Entity, Space::Image, Space::Text];

    pub fn name(self) -> &'static str {
        match self {
            Space::Entity => "entity",
            Space::Image => "image",
            Space::Text => "text",
        }
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "entity" => Ok(Space::Entity),
            "image" => Ok(Space::Image),
            "text" => Ok(Space::Text),
            other => Err(Error::invalid(format!("unknown embedding space {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxEmbedding {
    pub doc_id: String,
    pub space: Space,
    pub vector: Vec<f64>,
}

/// A string-keyed table of equal-length vectors.
#[derive(Debug, Clone, Default)]
pub struct VectorTable {
    dim: usize,
    rows: HashMap<String, Vec<f64>>,
}

impl VectorTable {
    pub fn new(rows: HashMap<String, Vec<f64>>) -> Result<Self> {
        let mut dim = None;
        for (key, v) in &rows {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Config(format!(
                        "vector for {key:?} has dimension {}, expected {d}",
                        v.len()
                    )))
                }
                _ => {}
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Config(format!("vector for {key:?} is not finite")));
            }
        }
        Ok(VectorTable {
            dim: dim.unwrap_or(0),
            rows,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, key: &str) -> Option<&[f64]> {
        self.rows.get(key).map(Vec::as_slice)
    }

    /// Reads `key<TAB>v1,v2,...,vd` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rows = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let ctx = || format!("{}:{}", path.display(), i + 1);
            let (key, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(ctx(), "expected key<TAB>values"))?;
            let v = values
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(ctx(), e))?;
            rows.insert(key.to_string(), v);
        }
        VectorTable::new(rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut keys: Vec<&String> = self.rows.keys().collect();
        keys.sort();
        for k in keys {
            let vals: Vec<String> = self.rows[k].iter().map(|x| x.to_string()).collect();
            writeln!(w, "{k}\t{}", vals.join(",")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Pre-trained entity and token vector sources.
#[derive(Debug, Clone, Default)]
pub struct EmbedTables {
    pub entity_table: VectorTable,
    pub token_table: VectorTable,
}

/// Lookup key for a whitespace token: lowercased, surrounding punctuation
/// stripped.
pub fn token_key(token: &str) -> String {
    token
        .trim_matches(|c: char| c.is_ascii_punctuation())
        .to_lowercase()
}

fn mean_of<'a>(vectors: impl Iterator<Item = &'a [f64]>, dim: usize) -> Option<Vec<f64>> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
        n += 1;
    }
    (n > 0).then(|| acc.into_iter().map(|a| a / n as f64).collect())
}

/// Mean of the token vectors of the known whitespace tokens in `text`.
pub fn embed_text(text: &str, table: &VectorTable) -> Option<Vec<f64>> {
    mean_of(
        text.split_whitespace()
            .filter_map(|t| table.get(&token_key(t))),
        table.dim(),
    )
}

/// Sign vector of a bit string: 1 → +1, 0 → −1.
pub fn sign_vector(bits: impl Iterator<Item = bool>) -> Vec<f64> {
    bits.map(|b| if b { 1.0 } else { -1.0 }).collect()
}

/// Computes one auxiliary embedding; `None` when the document has no usable
/// source for that space.
pub fn embed(doc: &Document, space: Space, tables: &EmbedTables) -> Option<AuxEmbedding> {
    let vector = match space {
        Space::Entity => mean_of(
            doc.entity_ids
                .iter()
                .filter_map(|e| tables.entity_table.get(e)),
            tables.entity_table.dim(),
        ),
        Space::Image => doc.image_hash.as_ref().map(|h| sign_vector(h.bits())),
        Space::Text => embed_text(&doc.title, &tables.token_table),
    }?;
    Some(AuxEmbedding {
        doc_id: doc.id.clone(),
        space,
        vector,
    })
}

/// Embeds every document in one space. Image hashes must share a length.
pub fn embed_all(docs: &[Document], space: Space, tables: &EmbedTables) -> Result<Vec<AuxEmbedding>> {
    let out: Vec<AuxEmbedding> = docs.iter().filter_map(|d| embed(d, space, tables)).collect();
    if let Some(first) = out.first() {
        if let Some(bad) = out.iter().find(|e| e.vector.len() != first.vector.len()) {
            return Err(Error::Config(format!(
                "{space} embedding of {} has dimension {}, expected {}",
                bad.doc_id,
                bad.vector.len(),
                first.vector.len()
            )));
        }
    }
    Ok(out)
}

pub fn write_embeddings(path: &Path, embeddings: &[AuxEmbedding]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in embeddings {
        let line = serde_json::to_string(e).map_err(|e| Error::parse("embedding", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: &Path) -> Result<Vec<AuxEmbedding>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ImageHash;

    fn table(rows: &[(&str, &[f64])]) -> VectorTable {
        VectorTable::new(rows.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect()).unwrap()
    }

    fn doc() -> Document {
        Document {
            id: "d".into(),
            title: "Storm hits coast".into(),
            body: String::new(),
            anchor_texts: vec![],
            byline_date: 0,
            publisher: "p".into(),
            language: "en".into(),
            entity_ids: vec![],
            image_hash: None,
        }
    }

    #[test]
    fn single_entity_is_its_vector() {
        let tables = EmbedTables {
            entity_table: table(&[("e", &[1.0, 0.0])]),
            ..Default::default()
        };
        let d = Document {
            entity_ids: vec!["e".into()],
            ..doc()
        };
        assert_eq!(embed(&d, Space::Entity, &tables).unwrap().vector, [1.0, 0.0]);
    }

    #[test]
    fn two_entities_average() {
        let tables = EmbedTables {
            entity_table: table(&[("e1", &[1.0, 0.0]), ("e2", &[0.0, 1.0])]),
            ..Default::default()
        };
        let d = Document {
            entity_ids: vec!["e1".into(), "e2".into(), "unknown".into()],
            ..doc()
        };
        assert_eq!(embed(&d, Space::Entity, &tables).unwrap().vector, [0.5, 0.5]);
    }

    #[test]
    fn image_hash_to_signs() {
        let d = Document {
            image_hash: Some(ImageHash::from_hex("F0").unwrap()),
            ..doc()
        };
        let v = embed(&d, Space::Image, &EmbedTables::default()).unwrap().vector;
        assert_eq!(v, [1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn hamming_distance_maps_to_squared_euclidean() {
        let a = ImageHash::from_hex("a5c3").unwrap();
        let b = ImageHash::from_hex("5fc1").unwrap();
        let va = sign_vector(a.bits());
        let vb = sign_vector(b.bits());
        let d2 = crate::util::squared_distance(&va, &vb);
        assert_eq!(d2, 4.0 * a.hamming(&b) as f64);
    }

    #[test]
    fn text_uses_known_title_tokens() {
        let tables = EmbedTables {
            token_table: table(&[("storm", &[2.0, 0.0]), ("coast", &[0.0, 2.0])]),
            ..Default::default()
        };
        let v = embed(&doc(), Space::Text, &tables).unwrap().vector;
        assert_eq!(v, [1.0, 1.0]);
    }

    #[test]
    fn missing_sources_are_absent() {
        let tables = EmbedTables::default();
        for space in Space::ALL {
            assert!(embed(&doc(), space, &tables).is_none());
        }
    }

    #[test]
    fn mismatched_table_is_config_error() {
        let rows = [("a".to_string(), vec![1.0]), ("b".to_string(), vec![1.0, 2.0])];
        assert!(matches!(
            VectorTable::new(rows.into_iter().collect()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn table_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.tsv");
        let t = table(&[("x", &[0.25, -1.5]), ("y", &[3.0, 4.0])]);
        t.save(&path).unwrap();
        let back = VectorTable::load(&path).unwrap();
        assert_eq!(back.get("x").unwrap(), [0.25, -1.5]);
        assert_eq!(back.dim(), 2);
    }
}
