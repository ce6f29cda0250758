use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::ann::{Index, Neighbor};
use crate::aux_embed::Space;
use crate::corpus::Document;
use crate::error::Result;

/// Nearest-neighbor lists of one space, keyed by anchor document id.
pub type NeighborLists = HashMap<String, Vec<Neighbor>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    pub anchor_id: String,
    pub neighbor_id: String,
    /// Cosine similarity per space in which the neighbor was retrieved.
    pub sims: BTreeMap<Space, f64>,
    pub date_delta_days: u64,
}

impl CandidatePair {
    pub fn max_sim(&self) -> f64 {
        self.sims.values().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_sim(&self) -> f64 {
        self.sims.values().sum::<f64>() / self.sims.len().max(1) as f64
    }
}

/// Queries every stored point of `index` for its top-k neighbors (itself
/// excluded).
pub fn neighbor_lists(index: &Index, k: usize) -> Result<NeighborLists> {
    index
        .points()
        .map(|(id, v)| Ok((id.to_string(), index.query_topk(v, k, Some(id))?)))
        .collect()
}

/// Unions neighbors across spaces. Output is sorted by (anchor, neighbor).
pub fn generate_candidates(docs: &[Document], lists: &BTreeMap<Space, NeighborLists>) -> Vec<CandidatePair> {
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut merged: BTreeMap<(String, String), BTreeMap<Space, f64>> = BTreeMap::new();
    for (&space, per_anchor) in lists {
        for (anchor, neighbors) in per_anchor {
            if !by_id.contains_key(anchor.as_str()) {
                continue;
            }
            for n in neighbors {
                if n.doc_id == *anchor || !by_id.contains_key(n.doc_id.as_str()) {
                    continue;
                }
                merged
                    .entry((anchor.clone(), n.doc_id.clone()))
                    .or_default()
                    .insert(space, n.score);
            }
        }
    }
    merged
        .into_iter()
        .map(|((anchor_id, neighbor_id), sims)| {
            let delta = by_id[anchor_id.as_str()].byline_date - by_id[neighbor_id.as_str()].byline_date;
            CandidatePair {
                anchor_id,
                neighbor_id,
                sims,
                date_delta_days: delta.unsigned_abs(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DateLabel {
    Positive,
    Negative,
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateFilter {
    pub max_pos_days: u64,
    pub min_neg_days: u64,
}

impl Default for DateFilter {
    fn default() -> Self {
        DateFilter {
            max_pos_days: 1,
            min_neg_days: 365,
        }
    }
}

impl DateFilter {
    pub fn classify(&self, pair: &CandidatePair) -> DateLabel {
        date_filter(pair, self.max_pos_days, self.min_neg_days)
    }
}

pub fn date_filter(pair: &CandidatePair, max_pos_days: u64, min_neg_days: u64) -> DateLabel {
    debug_assert!(max_pos_days < min_neg_days);
    if pair.date_delta_days <= max_pos_days {
        DateLabel::Positive
    } else if pair.date_delta_days >= min_neg_days {
        DateLabel::Negative
    } else {
        DateLabel::Discard
    }
}
