//! Byline-date bucket prediction from hashed bag-of-words features.
//!
//! Event coverage concentrates its vocabulary in a narrow date range, so the
//! predicted distribution is peaked; evergreen text spreads over many
//! buckets. The denoiser consumes that difference.

use serde::{Deserialize, Serialize};

use crate::corpus::{Day, Document};
use crate::error::{Error, Result};
use crate::linear::{FitOptions, SoftmaxRegression, SparseRow};
use crate::util::{entropy, fnv1a64};

pub const DEFAULT_HASH_DIM: usize = 1 << 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatePredictor {
    /// `B + 1` ascending edges; bucket `i` covers `[edges[i], edges[i+1])`.
    pub bucket_edges: Vec<Day>,
    pub hash_dim: usize,
    pub model: SoftmaxRegression,
}

/// Presence features of lowercased title and body tokens, L2-normalized.
pub fn hashed_features(text: &str, dim: usize) -> SparseRow {
    let mut cols: Vec<usize> = text
        .split_whitespace()
        .map(|t| (fnv1a64(t.to_lowercase().as_bytes()) % dim as u64) as usize)
        .collect();
    cols.sort_unstable();
    cols.dedup();
    let v = 1.0 / (cols.len().max(1) as f64).sqrt();
    cols.into_iter().map(|c| (c, v)).collect()
}

fn doc_text(doc: &Document) -> String {
    format!("{} {}", doc.title, doc.body)
}

/// Equal-width buckets over `[min, max]`.
pub fn equal_width_edges(min: Day, max: Day, buckets: usize) -> Vec<Day> {
    let span = (max - min + 1) as f64;
    let mut edges: Vec<Day> = (0..buckets)
        .map(|i| min + (span * i as f64 / buckets as f64).floor() as Day)
        .collect();
    edges.push(max + 1);
    edges
}

impl DatePredictor {
    pub fn num_buckets(&self) -> usize {
        self.bucket_edges.len() - 1
    }

    /// Bucket of a date; dates outside the fitted range clamp to the ends.
    pub fn bucket_of(&self, day: Day) -> usize {
        let b = self.num_buckets();
        match self.bucket_edges.partition_point(|&e| e <= day) {
            0 => 0,
            i => (i - 1).min(b - 1),
        }
    }

    pub fn features(&self, doc: &Document) -> SparseRow {
        hashed_features(&doc_text(doc), self.hash_dim)
    }

    /// Softmax distribution over date buckets.
    pub fn predict_date_distribution(&self, doc: &Document) -> Vec<f64> {
        self.model.predict_proba(&self.features(doc))
    }

    pub fn entropy(&self, doc: &Document) -> f64 {
        entropy(&self.predict_date_distribution(doc))
    }

    /// Probability mass within one bucket of the document's true bucket.
    pub fn mass_near_truth(&self, doc: &Document) -> f64 {
        let p = self.predict_date_distribution(doc);
        let t = self.bucket_of(doc.byline_date);
        let lo = t.saturating_sub(1);
        let hi = (t + 1).min(p.len() - 1);
        p[lo..=hi].iter().sum()
    }

    pub fn accuracy(&self, docs: &[Document]) -> f64 {
        let hits = docs
            .iter()
            .filter(|d| self.model.predict(&self.features(d)) == self.bucket_of(d.byline_date))
            .count();
        hits as f64 / docs.len().max(1) as f64
    }
}

pub fn train_date_predictor(docs: &[Document], buckets: usize) -> Result<DatePredictor> {
    train_date_predictor_with(docs, buckets, DEFAULT_HASH_DIM, &default_fit())
}

pub fn default_fit() -> FitOptions {
    FitOptions {
        epochs: 200,
        learning_rate: 2.0,
        l2: 1e-4,
    }
}

pub fn train_date_predictor_with(
    docs: &[Document],
    buckets: usize,
    hash_dim: usize,
    opts: &FitOptions,
) -> Result<DatePredictor> {
    if buckets < 2 {
        return Err(Error::invalid("date predictor needs at least 2 buckets"));
    }
    if docs.len() < buckets {
        return Err(Error::invalid(format!(
            "date predictor needs at least {buckets} documents, got {}",
            docs.len()
        )));
    }
    let min = docs.iter().map(|d| d.byline_date).min().unwrap();
    let max = docs.iter().map(|d| d.byline_date).max().unwrap();
    if min == max {
        return Err(Error::invalid("all documents share one byline date; cannot fit date buckets"));
    }
    let mut predictor = DatePredictor {
        bucket_edges: equal_width_edges(min, max, buckets),
        hash_dim,
        model: SoftmaxRegression::zeros(buckets, hash_dim),
    };
    let labels: Vec<usize> = docs.iter().map(|d| predictor.bucket_of(d.byline_date)).collect();
    let mut occupied = labels.clone();
    occupied.sort_unstable();
    occupied.dedup();
    if occupied.len() < 2 {
        return Err(Error::invalid("corpus occupies a single date bucket"));
    }
    let rows: Vec<SparseRow> = docs.iter().map(|d| predictor.features(d)).collect();
    predictor.model = SoftmaxRegression::fit(&rows, &labels, buckets, hash_dim, opts)?;
    Ok(predictor)
}

/// Roughly monthly buckets over the corpus date range.
pub fn monthly_buckets(docs: &[Document]) -> usize {
    let min = docs.iter().map(|d| d.byline_date).min().unwrap_or(0);
    let max = docs.iter().map(|d| d.byline_date).max().unwrap_or(0);
    (((max - min + 1) as f64 / 30.0).ceil() as usize).max(2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng;
    use rand::Rng as _;

    fn doc(id: usize, title: &str, body: &str, date: Day) -> Document {
        Document {
            id: format!("d{id}"),
            title: title.into(),
            body: body.into(),
            anchor_texts: vec![],
            byline_date: date,
            publisher: "p".into(),
            language: "en".into(),
            entity_ids: vec![],
            image_hash: None,
        }
    }

    fn filler(r: &mut crate::util::Rng, n: usize) -> String {
        (0..n)
            .map(|_| format!("w{}", r.random_range(0..500)))
            .collect::<Vec<_>>()
            .join(" ")
    }

    #[test]
    fn marker_tokens_are_learned() {
        let mut r = rng(1, 0);
        let b = 4;
        let make = |r: &mut crate::util::Rng, i: usize| {
            let bucket = i % b;
            let date = (bucket * 100 + r.random_range(0..100)) as Day;
            doc(i, "", &format!("marker{bucket} {}", filler(r, 10)), date)
        };
        let train: Vec<_> = (0..200).map(|i| make(&mut r, i)).collect();
        let test: Vec<_> = (200..300).map(|i| make(&mut r, i)).collect();
        let mut all_dates: Vec<_> = train.clone();
        // Pin the range so bucket edges align with the marker scheme.
        all_dates.push(doc(999, "", "", 0));
        all_dates.push(doc(998, "", "", 399));
        let p = train_date_predictor(&all_dates, b).unwrap();
        assert_eq!(p.bucket_edges, vec![0, 100, 200, 300, 400]);
        assert!(p.accuracy(&test) >= 0.95, "accuracy {}", p.accuracy(&test));
    }

    #[test]
    fn random_text_is_chance_level() {
        let mut r = rng(2, 0);
        let make = |r: &mut crate::util::Rng, i: usize| doc(i, "", &filler(r, 15), r.random_range(0..200));
        let train: Vec<_> = (0..300).map(|i| make(&mut r, i)).collect();
        let test: Vec<_> = (0..600).map(|i| make(&mut r, i)).collect();
        let p = train_date_predictor(&train, 2).unwrap();
        let acc = p.accuracy(&test);
        assert!((acc - 0.5).abs() <= 0.1, "accuracy {acc}");
    }

    #[test]
    fn empty_body_falls_back_to_title() {
        let docs = vec![doc(0, "alpha", "", 0), doc(1, "beta", "", 10)];
        let p = train_date_predictor(&docs, 2).unwrap();
        let dist = p.predict_date_distribution(&doc(2, "alpha", "", 0));
        assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(dist[0] > dist[1]);
    }

    #[test]
    fn single_date_corpus_is_rejected() {
        let docs = vec![doc(0, "a", "x", 5), doc(1, "b", "y", 5)];
        assert!(train_date_predictor(&docs, 2).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let p = DatePredictor {
            bucket_edges: vec![0, 10, 20, 30],
            hash_dim: 16,
            model: SoftmaxRegression::zeros(3, 16),
        };
        let dist = p.predict_date_distribution(&doc(0, "", "", 0));
        for x in dist {
            assert!((x - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn evergreen_text_has_higher_entropy() {
        let mut r = rng(3, 0);
        let mut docs = Vec::new();
        for i in 0..120 {
            // Events: story-specific vocabulary on one date.
            let story = i % 12;
            let date = (story * 90) as Day;
            docs.push(doc(i, "", &format!("story{story}a story{story}b {}", filler(&mut r, 6)), date));
        }
        for i in 120..160 {
            // Evergreen: the same vocabulary at any time.
            docs.push(doc(i, "", &format!("wage policy {}", filler(&mut r, 6)), r.random_range(0..1080)));
        }
        let p = train_date_predictor(&docs, 12).unwrap();
        let event = doc(0, "", "story3a story3b", 0);
        let evergreen = doc(0, "", "wage policy", 0);
        assert!(p.entropy(&evergreen) > p.entropy(&event));
    }

    #[test]
    fn buckets_clamp() {
        let p = DatePredictor {
            bucket_edges: equal_width_edges(10, 29, 2),
            hash_dim: 4,
            model: SoftmaxRegression::zeros(2, 4),
        };
        assert_eq!(p.bucket_edges, vec![10, 20, 30]);
        assert_eq!(p.bucket_of(0), 0);
        assert_eq!(p.bucket_of(19), 0);
        assert_eq!(p.bucket_of(20), 1);
        assert_eq!(p.bucket_of(99), 1);
    }
}
