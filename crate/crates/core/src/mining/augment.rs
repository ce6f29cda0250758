//! Expansion of a document triplet (a, p, n) into text triplets mixing short
//! and long context. Positive and negative of one row are always built from
//! the same component type.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aux_embed::{embed_text, VectorTable};
use crate::corpus::{is_english, Document};
use crate::error::{Error, Result};
use crate::util::cosine;

/// Separator between title and body in concatenated text.
pub const SEPARATOR: &str = "[SEP]";

pub const ANCHOR_TEXT_MIN_SIM: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugType {
    /// (Title(a), Body(a), Body(n))
    TitleBody,
    /// (AnchorText(a), Title+Body(a), Title+Body(n))
    AnchorTitleBody,
    /// (Title(a), Title+Body(p), Title+Body(n))
    TitlePosBody,
    /// (Title+Body(a), Title+Body(p), Title+Body(n))
    FullFull,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedTriplet {
    pub anchor_text: String,
    pub positive_text: String,
    pub negative_text: String,
    pub aug_type: AugType,
    pub positive_translated: bool,
    pub negative_translated: bool,
    pub language: String,
    /// Source document triplet.
    pub anchor_id: String,
    pub positive_id: String,
    pub negative_id: String,
}

pub fn title_body(doc: &Document) -> String {
    format!("{} {SEPARATOR} {}", doc.title, doc.body)
}

/// Decides whether an incoming anchor text summarizes its document.
pub trait AnchorTextCheck {
    fn accepts(&self, anchor_text: &str, doc: &Document) -> bool;
}

/// Cosine between the text-space embeddings of the anchor text and the title.
pub struct TitleSimilarityCheck<'a> {
    pub token_table: &'a VectorTable,
    pub min_sim: f64,
}

impl AnchorTextCheck for TitleSimilarityCheck<'_> {
    fn accepts(&self, anchor_text: &str, doc: &Document) -> bool {
        match (embed_text(anchor_text, self.token_table), embed_text(&doc.title, self.token_table)) {
            (Some(a), Some(t)) => cosine(&a, &t) >= self.min_sim,
            _ => false,
        }
    }
}

pub struct AcceptAll;

impl AnchorTextCheck for AcceptAll {
    fn accepts(&self, _: &str, _: &Document) -> bool {
        true
    }
}

/// Used when no token table is available for the similarity check.
pub struct RejectAll;

impl AnchorTextCheck for RejectAll {
    fn accepts(&self, _: &str, _: &Document) -> bool {
        false
    }
}

pub fn augment(anchor: &Document, positive: &Document, negative: &Document, check: &dyn AnchorTextCheck) -> Vec<AugmentedTriplet> {
    let has_body = |d: &Document| !d.body.is_empty();
    let row = |aug_type, a: String, p: String, n: String| AugmentedTriplet {
        anchor_text: a,
        positive_text: p,
        negative_text: n,
        aug_type,
        positive_translated: false,
        negative_translated: false,
        language: anchor.language.clone(),
        anchor_id: anchor.id.clone(),
        positive_id: positive.id.clone(),
        negative_id: negative.id.clone(),
    };
    let mut out = Vec::new();
    if has_body(anchor) && has_body(negative) {
        out.push(row(AugType::TitleBody, anchor.title.clone(), anchor.body.clone(), negative.body.clone()));
        for text in &anchor.anchor_texts {
            if check.accepts(text, anchor) {
                out.push(row(AugType::AnchorTitleBody, text.clone(), title_body(anchor), title_body(negative)));
            }
        }
    }
    if has_body(positive) && has_body(negative) {
        out.push(row(AugType::TitlePosBody, anchor.title.clone(), title_body(positive), title_body(negative)));
        if has_body(anchor) {
            out.push(row(AugType::FullFull, title_body(anchor), title_body(positive), title_body(negative)));
        }
    }
    out.retain(|t| !t.anchor_text.trim().is_empty());
    out
}

pub trait Translator {
    /// Translates `text` into English; `None` on failure.
    fn translate(&self, text: &str, source_language: &str) -> Option<String>;
}

pub struct IdentityTranslator;

impl Translator for IdentityTranslator {
    fn translate(&self, text: &str, _: &str) -> Option<String> {
        Some(text.to_string())
    }
}

/// Token-by-token dictionary translation; unknown tokens pass through.
#[derive(Debug, Clone, Default)]
pub struct DictionaryTranslator {
    pub entries: HashMap<String, String>,
}

impl DictionaryTranslator {
    /// Reads `source<TAB>target` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let (src, dst) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(format!("{}:{}", path.display(), i + 1), "expected source<TAB>target"))?;
            entries.insert(src.trim().to_string(), dst.trim().to_string());
        }
        Ok(DictionaryTranslator { entries })
    }
}

impl Translator for DictionaryTranslator {
    fn translate(&self, text: &str, _: &str) -> Option<String> {
        Some(
            text.split_whitespace()
                .map(|t| self.entries.get(t).map_or(t, String::as_str))
                .collect::<Vec<_>>()
                .join(" "),
        )
    }
}

/// Replaces positive and negative with their English translation and marks
/// both as translated. English triplets and translator failures return the
/// input unchanged.
pub fn translate_augment(triplet: &AugmentedTriplet, translator: &dyn Translator) -> AugmentedTriplet {
    if is_english(&triplet.language) {
        return triplet.clone();
    }
    let translated = translator
        .translate(&triplet.positive_text, &triplet.language)
        .zip(translator.translate(&triplet.negative_text, &triplet.language));
    match translated {
        Some((p, n)) => AugmentedTriplet {
            positive_text: p,
            negative_text: n,
            positive_translated: true,
            negative_translated: true,
            ..triplet.clone()
        },
        None => triplet.clone(),
    }
}
