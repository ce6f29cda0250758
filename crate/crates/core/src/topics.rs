//! Document-topic labels mined from publisher hub pages.
//!
//! A hub whose title matches the topic lexicon labels all its members with
//! that topic. Unobserved (document, topic) pairs count as negatives only when
//! the topic appears on some hub of the document's own publisher.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng;

pub type TopicId = String;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HubPage {
    pub publisher: String,
    pub title: String,
    pub member_doc_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicExample {
    pub doc_id: String,
    pub positives: BTreeSet<TopicId>,
    pub negatives: BTreeSet<TopicId>,
}

impl TopicExample {
    /// All labeled topics (positives ∪ negatives).
    pub fn labeled_topics(&self) -> impl Iterator<Item = (&TopicId, bool)> {
        self.positives
            .iter()
            .map(|t| (t, true))
            .chain(self.negatives.iter().map(|t| (t, false)))
    }
}

/// Case-insensitive surface form → topic id.
#[derive(Debug, Clone, Default)]
pub struct TopicLexicon {
    entries: HashMap<String, TopicId>,
}

impl TopicLexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, TopicId)>) -> Self {
        TopicLexicon {
            entries: entries
                .into_iter()
                .map(|(s, t)| (normalize_surface(&s), t))
                .collect(),
        }
    }

    /// Reads `surface<TAB>topic_id` lines.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let (surface, topic) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(format!("{}:{}", path.display(), i + 1), "expected surface<TAB>topic_id"))?;
            entries.push((surface.to_string(), topic.trim().to_string()));
        }
        Ok(TopicLexicon::new(entries))
    }

    pub fn lookup(&self, surface: &str) -> Option<&TopicId> {
        self.entries.get(&normalize_surface(surface))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted distinct topic ids.
    pub fn topics(&self) -> Vec<TopicId> {
        let set: BTreeSet<&TopicId> = self.entries.values().collect();
        set.into_iter().cloned().collect()
    }
}

fn normalize_surface(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

pub fn mine_hub_topics(hubs: &[HubPage], lexicon: &TopicLexicon) -> Result<BTreeMap<String, BTreeSet<TopicId>>> {
    if lexicon.is_empty() {
        return Err(Error::invalid("topic lexicon is empty"));
    }
    let mut out: BTreeMap<String, BTreeSet<TopicId>> = BTreeMap::new();
    for hub in hubs {
        let Some(topic) = lexicon.lookup(&hub.title) else {
            continue;
        };
        for doc in &hub.member_doc_ids {
            out.entry(doc.clone()).or_default().insert(topic.clone());
        }
    }
    Ok(out)
}

/// Topics appearing on any matched hub of each publisher.
pub fn publisher_vocabulary(hubs: &[HubPage], lexicon: &TopicLexicon) -> BTreeMap<String, BTreeSet<TopicId>> {
    let mut out: BTreeMap<String, BTreeSet<TopicId>> = BTreeMap::new();
    for hub in hubs {
        if let Some(topic) = lexicon.lookup(&hub.title) {
            out.entry(hub.publisher.clone()).or_default().insert(topic.clone());
        }
    }
    out
}

/// Builds one example per labeled document. A document's publisher is the
/// publisher of the hubs listing it.
pub fn derive_examples(
    doc_topics: &BTreeMap<String, BTreeSet<TopicId>>,
    hubs: &[HubPage],
    lexicon: &TopicLexicon,
) -> Vec<TopicExample> {
    let vocab = publisher_vocabulary(hubs, lexicon);
    let mut doc_publishers: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for hub in hubs {
        for d in &hub.member_doc_ids {
            doc_publishers.entry(d).or_default().insert(&hub.publisher);
        }
    }
    doc_topics
        .iter()
        .map(|(doc_id, positives)| {
            let mut pool: BTreeSet<TopicId> = BTreeSet::new();
            for publisher in doc_publishers.get(doc_id.as_str()).into_iter().flatten() {
                if let Some(v) = vocab.get(*publisher) {
                    pool.extend(v.iter().cloned());
                }
            }
            TopicExample {
                doc_id: doc_id.clone(),
                positives: positives.clone(),
                negatives: pool.difference(positives).cloned().collect(),
            }
        })
        .collect()
}

pub fn positive_ratio(examples: &[TopicExample]) -> f64 {
    let pos: usize = examples.iter().map(|e| e.positives.len()).sum();
    let neg: usize = examples.iter().map(|e| e.negatives.len()).sum();
    pos as f64 / (pos + neg).max(1) as f64
}

/// Down-samples negatives so the dataset-wide positive share approaches
/// `target_pos_ratio`. Every example with both positives and negatives keeps
/// the same expected fraction of its negatives (integer part deterministic,
/// fractional part Bernoulli); examples lacking either side are untouched.
pub fn balance_sample(examples: &[TopicExample], target_pos_ratio: f64, seed: u64) -> Result<Vec<TopicExample>> {
    if !(target_pos_ratio > 0.0 && target_pos_ratio < 1.0) {
        return Err(Error::invalid("target positive ratio must lie in (0, 1)"));
    }
    let eligible = |e: &TopicExample| !e.positives.is_empty() && !e.negatives.is_empty();
    let pos: usize = examples.iter().map(|e| e.positives.len()).sum();
    let fixed_neg: usize = examples.iter().filter(|e| !eligible(e)).map(|e| e.negatives.len()).sum();
    let elig_neg: usize = examples.iter().filter(|e| eligible(e)).map(|e| e.negatives.len()).sum();
    if elig_neg == 0 {
        return Ok(examples.to_vec());
    }
    let wanted = pos as f64 * (1.0 - target_pos_ratio) / target_pos_ratio - fixed_neg as f64;
    let keep_fraction = (wanted / elig_neg as f64).clamp(0.0, 1.0);
    if keep_fraction >= 1.0 {
        return Ok(examples.to_vec());
    }
    let mut r = rng(seed, 0x70_91c);
    Ok(examples
        .iter()
        .map(|e| {
            if !eligible(e) {
                return e.clone();
            }
            let target = keep_fraction * e.negatives.len() as f64;
            let mut keep = target.floor() as usize;
            if r.random::<f64>() < target.fract() {
                keep += 1;
            }
            let mut negs: Vec<TopicId> = e.negatives.iter().cloned().collect();
            negs.shuffle(&mut r);
            negs.truncate(keep);
            TopicExample {
                doc_id: e.doc_id.clone(),
                positives: e.positives.clone(),
                negatives: negs.into_iter().collect(),
            }
        })
        .collect())
}
