//! Corpus ingestion, validation, cleaning and exact deduplication.
//!
//! Input is JSON-lines, one article per line. A record survives ingestion
//! when it parses, carries a byline date and a publisher, and its cleaned
//! body has at least `min_words` whitespace-delimited words.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::fnv1a64;

pub const DEFAULT_MIN_WORDS: usize = 100;

/// Day count since 1970-01-01.
pub type Day = i64;

/// Fixed-length bit string carried as hex in corpus files (most significant
/// bit of the first byte first).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageHash(Vec<u8>);

impl ImageHash {
    pub fn from_hex(s: &str) -> Result<Self> {
        let s = s.trim().trim_start_matches("0x");
        hex::decode(s)
            .map(ImageHash)
            .map_err(|e| Error::parse("image_hash", e))
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn bit_len(&self) -> usize {
        self.0.len() * 8
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        self.0
            .iter()
            .flat_map(|byte| (0..8).rev().map(move |i| (byte >> i) & 1 == 1))
    }

    pub fn hamming(&self, other: &ImageHash) -> u32 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

/// One news article.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub body: String,
    pub anchor_texts: Vec<String>,
    pub byline_date: Day,
    pub publisher: String,
    pub language: String,
    pub entity_ids: Vec<String>,
    pub image_hash: Option<ImageHash>,
}

impl Document {
    pub fn word_count(&self) -> usize {
        self.body.split_whitespace().count()
    }

    pub fn is_english(&self) -> bool {
        is_english(&self.language)
    }
}

/// Primary subtag check on a BCP-47 code.
pub fn is_english(language: &str) -> bool {
    language
        .split(['-', '_'])
        .next()
        .is_some_and(|p| p.eq_ignore_ascii_case("en"))
}

pub fn parse_date(s: &str) -> Result<Day> {
    let d = NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d")
        .map_err(|e| Error::parse(format!("date {s:?}"), e))?;
    Ok((d - NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()).num_days())
}

pub fn format_date(day: Day) -> String {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
    (epoch + chrono::Duration::days(day))
        .format("%Y-%m-%d")
        .to_string()
}

/// On-disk record. Everything except `id` may be missing; validation
/// decides what survives.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub anchor_texts: Vec<String>,
    #[serde(default)]
    pub byline_date: Option<String>,
    #[serde(default)]
    pub publisher: Option<String>,
    #[serde(default)]
    pub language: String,
    #[serde(default)]
    pub entity_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_hash: Option<String>,
}

impl From<&Document> for DocumentRecord {
    fn from(d: &Document) -> Self {
        DocumentRecord {
            id: d.id.clone(),
            title: d.title.clone(),
            body: d.body.clone(),
            anchor_texts: d.anchor_texts.clone(),
            byline_date: Some(format_date(d.byline_date)),
            publisher: Some(d.publisher.clone()),
            language: d.language.clone(),
            entity_ids: d.entity_ids.clone(),
            image_hash: d.image_hash.as_ref().map(ImageHash::to_hex),
        }
    }
}

/// Why a record did not make it into the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Malformed,
    MissingDate,
    MissingPublisher,
    TooShort,
}

/// Per-language counts of retained documents, plus reject tallies.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
    pub malformed: usize,
    pub filtered: usize,
}

impl CorpusStats {
    pub fn from_docs(docs: &[Document]) -> Self {
        let mut stats = CorpusStats::default();
        for d in docs {
            *stats.counts.entry(d.language.clone()).or_default() += 1;
            stats.total += 1;
        }
        stats
    }
}

fn clean_text(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Validates and cleans one record.
pub fn validate(record: DocumentRecord, min_words: usize) -> std::result::Result<Document, Rejection> {
    let date = match record.byline_date.as_deref().map(str::trim) {
        Some(s) if !s.is_empty() => parse_date(s).map_err(|_| Rejection::Malformed)?,
        _ => return Err(Rejection::MissingDate),
    };
    let publisher = match record.publisher.as_deref().map(str::trim) {
        Some(p) if !p.is_empty() => p.to_string(),
        _ => return Err(Rejection::MissingPublisher),
    };
    let image_hash = match record.image_hash.as_deref() {
        Some(h) if !h.trim().is_empty() => {
            Some(ImageHash::from_hex(h).map_err(|_| Rejection::Malformed)?)
        }
        _ => None,
    };
    let body = clean_text(&record.body);
    if body.split(' ').filter(|w| !w.is_empty()).count() < min_words {
        return Err(Rejection::TooShort);
    }
    Ok(Document {
        id: record.id,
        title: clean_text(&record.title),
        body,
        anchor_texts: record
            .anchor_texts
            .iter()
            .map(|a| clean_text(a))
            .filter(|a| !a.is_empty())
            .collect(),
        byline_date: date,
        publisher,
        language: record.language.trim().to_string(),
        entity_ids: record.entity_ids,
        image_hash,
    })
}

/// Reads, validates and cleans a JSON-lines corpus. Output is sorted by id.
pub fn ingest(path: &Path, min_words: usize) -> Result<(Vec<Document>, CorpusStats)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    ingest_reader(BufReader::new(file), min_words, &path.display().to_string())
}

pub fn ingest_reader<R: BufRead>(
    reader: R,
    min_words: usize,
    source: &str,
) -> Result<(Vec<Document>, CorpusStats)> {
    let mut docs = Vec::new();
    let mut malformed = 0;
    let mut filtered = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DocumentRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("{source}:{}: skipping malformed record: {e}", lineno + 1);
                malformed += 1;
                continue;
            }
        };
        match validate(record, min_words) {
            Ok(doc) => docs.push(doc),
            Err(Rejection::Malformed) => malformed += 1,
            Err(_) => filtered += 1,
        }
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));
    let mut stats = CorpusStats::from_docs(&docs);
    stats.malformed = malformed;
    stats.filtered = filtered;
    Ok((docs, stats))
}

/// Fingerprint of the lowercased, whitespace-collapsed body.
pub fn body_fingerprint(body: &str) -> u64 {
    let normalized = body
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ");
    fnv1a64(normalized.as_bytes())
}

/// Keeps one document per body fingerprint: the earliest byline date, then
/// the smallest id. Output is sorted by id.
pub fn dedup(docs: Vec<Document>) -> Vec<Document> {
    let mut best: HashMap<u64, Document> = HashMap::with_capacity(docs.len());
    for doc in docs {
        let fp = body_fingerprint(&doc.body);
        match best.get(&fp) {
            Some(kept) if (kept.byline_date, &kept.id) <= (doc.byline_date, &doc.id) => {}
            _ => {
                best.insert(fp, doc);
            }
        }
    }
    let mut out: Vec<Document> = best.into_values().collect();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        let line = serde_json::to_string(&DocumentRecord::from(d))
            .map_err(|e| Error::parse("document record", e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads an already-cleaned corpus (no word threshold).
pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let (docs, stats) = ingest(path, 0)?;
    if stats.malformed + stats.filtered > 0 {
        log::warn!(
            "{}: {} records were not valid documents",
            path.display(),
            stats.malformed + stats.filtered
        );
    }
    Ok(docs)
}
