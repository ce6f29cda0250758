//! Metrics on frozen embeddings.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};
use crate::kmeans::{self, KMeansOptions};
use crate::linear::{dense_to_sparse, FitOptions, SoftmaxRegression};
use crate::util::cosine;

/// Ranks starting at 1; ties share the average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn spearman_rho(pred: &[f64], gold: &[f64]) -> Result<f64> {
    if pred.len() != gold.len() || pred.len() < 2 {
        return Err(Error::invalid("spearman needs two equal-length lists of at least 2 values"));
    }
    pearson(&average_ranks(pred), &average_ranks(gold))
        .ok_or_else(|| Error::invalid("spearman correlation undefined for constant input"))
}

fn comb2(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Adjusted Rand index between two labelings of the same items. Two
/// partitions that are both all-singletons or both one cluster score 1.
pub fn adjusted_rand_index<A: Ord, B: Ord>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("partitions have different lengths"));
    }
    let mut table: BTreeMap<(&A, &B), u64> = BTreeMap::new();
    let mut rows: BTreeMap<&A, u64> = BTreeMap::new();
    let mut cols: BTreeMap<&B, u64> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let n = a.len() as u64;
    let index: f64 = table.values().map(|&c| comb2(c)).sum();
    let sa: f64 = rows.values().map(|&c| comb2(c)).sum();
    let sb: f64 = cols.values().map(|&c| comb2(c)).sum();
    let total = comb2(n);
    let expected = if total > 0.0 { sa * sb / total } else { 0.0 };
    let max = (sa + sb) / 2.0;
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// k-means on the embeddings, scored against `labels` with ARI.
pub fn kmeans_ari(embeddings: &[Vec<f64>], labels: &[usize], k: usize, seed: u64, restarts: usize) -> Result<f64> {
    if embeddings.len() != labels.len() {
        return Err(Error::invalid("embedding and label counts differ"));
    }
    let fit = kmeans::fit(
        embeddings,
        k,
        &KMeansOptions {
            restarts,
            seed,
            ..Default::default()
        },
    )?;
    adjusted_rand_index(labels, &fit.assignments)
}

/// AP over the first `k` ranked ids, normalized by `min(|relevant|, k)`.
pub fn average_precision(ranking: &[String], relevant: &BTreeSet<String>, k: usize) -> f64 {
    let denom = relevant.len().min(k);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0;
    let mut sum = 0.0;
    for (r, id) in ranking.iter().take(k).enumerate() {
        if relevant.contains(id) {
            hits += 1;
            sum += hits as f64 / (r + 1) as f64;
        }
    }
    sum / denom as f64
}

/// Corpus ids ordered by cosine to `query`, ties by id.
pub fn rank_by_cosine(query: &[f64], corpus: &[(String, Vec<f64>)]) -> Vec<String> {
    let mut scored: Vec<(f64, &String)> = corpus.iter().map(|(id, v)| (cosine(query, v), id)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().map(|(_, id)| id.clone()).collect()
}

pub fn mean_average_precision(
    queries: &[(Vec<f64>, BTreeSet<String>)],
    corpus: &[(String, Vec<f64>)],
    k: usize,
) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    queries
        .iter()
        .map(|(q, rel)| average_precision(&rank_by_cosine(q, corpus), rel, k))
        .sum::<f64>()
        / queries.len() as f64
}

/// Fraction of triplets with `cos(a, p) > cos(a, n)`.
pub fn triplet_accuracy(triplets: &[(Vec<f64>, Vec<f64>, Vec<f64>)]) -> f64 {
    if triplets.is_empty() {
        return 0.0;
    }
    let ok = triplets.iter().filter(|(a, p, n)| cosine(a, p) > cosine(a, n)).count();
    ok as f64 / triplets.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOptions {
    pub l2: f64,
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            l2: 1e-3,
            epochs: 500,
            learning_rate: 0.5,
        }
    }
}

/// Multinomial logistic regression on standardized frozen embeddings;
/// returns test accuracy. Test classes unseen in training count as errors.
pub fn linear_probe(train: &[(Vec<f64>, usize)], test: &[(Vec<f64>, usize)], opts: &ProbeOptions) -> Result<f64> {
    let classes: BTreeSet<usize> = train.iter().map(|(_, c)| *c).collect();
    if classes.len() < 2 {
        return Err(Error::invalid("linear probe needs at least two training classes"));
    }
    if test.is_empty() {
        return Err(Error::invalid("empty probe test set"));
    }
    let index: HashMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let dim = train[0].0.len();
    let n = train.len() as f64;
    let mut mean = vec![0.0; dim];
    for (x, _) in train {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; dim];
    for (x, _) in train {
        for ((s, v), m) in std.iter_mut().zip(x).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    let std: Vec<f64> = std.into_iter().map(|s| if s > 1e-12 { s.sqrt() } else { 1.0 }).collect();
    let standardize = |x: &[f64]| -> Vec<f64> { x.iter().zip(&mean).zip(&std).map(|((v, m), s)| (v - m) / s).collect() };

    let rows: Vec<_> = train.iter().map(|(x, _)| dense_to_sparse(&standardize(x))).collect();
    let labels: Vec<usize> = train.iter().map(|(_, c)| index[c]).collect();
    let model = SoftmaxRegression::fit(
        &rows,
        &labels,
        classes.len(),
        dim,
        &FitOptions {
            epochs: opts.epochs,
            learning_rate: opts.learning_rate,
            l2: opts.l2,
        },
    )?;
    let unseen = test.iter().filter(|(_, c)| !index.contains_key(c)).count();
    if unseen > 0 {
        log::warn!("{unseen} probe test examples have classes unseen in training");
    }
    let correct = test
        .iter()
        .filter(|(x, c)| index.get(c) == Some(&model.predict(&dense_to_sparse(&standardize(x)))))
        .count();
    Ok(correct as f64 / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng as _;

    #[test]
    fn spearman_examples() {
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman_rho(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!((spearman_rho(&[0.1, 0.5, 0.3], &[0.0, 1.0, 5.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!(spearman_rho(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ties_get_average_rank() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[5, 5, 7, 7]).unwrap(), 1.0);
        assert!((adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(adjusted_rand_index(&[0, 1, 2, 3], &[0, 0, 0, 0]).unwrap(), 0.0);
    }

    #[test]
    fn ap_examples() {
        let rel: BTreeSet<String> = ["d1", "d2"].map(String::from).into();
        let ranking: Vec<String> = ["x", "d1", "y", "d2"].map(String::from).into();
        assert!((average_precision(&ranking, &rel, 8) - 0.5).abs() < 1e-12);
        let first: Vec<String> = ["d1"].map(String::from).into();
        let one: BTreeSet<String> = ["d1"].map(String::from).into();
        assert_eq!(average_precision(&first, &one, 8), 1.0);
        assert_eq!(average_precision(&["z".to_string()], &one, 8), 0.0);
    }

    #[test]
    fn probe_on_separable_blobs() {
        let mut r = crate::util::rng(3, 0);
        let mut blob = |c: usize| {
            let center = if c == 0 { -3.0 } else { 3.0 };
            (vec![center + r.random::<f64>(), r.random::<f64>()], c)
        };
        let train: Vec<_> = (0..100).map(|i| blob(i % 2)).collect();
        let test: Vec<_> = (0..100).map(|i| blob(i % 2)).collect();
        assert!(linear_probe(&train, &test, &ProbeOptions::default()).unwrap() >= 0.99);
        assert_eq!(linear_probe(&train, &train, &ProbeOptions::default()).unwrap(), 1.0);
    }
}
