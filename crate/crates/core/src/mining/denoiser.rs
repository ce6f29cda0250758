//! Logistic-regression filter for date-derived negatives.
//!
//! Feature vector (fixed order, [`NUM_FEATURES`] entries):
//!
//! 0. max similarity across retrieval spaces
//! 1. mean similarity across retrieval spaces
//! 2. entropy of the anchor's predicted date distribution
//! 3. entropy of the neighbor's predicted date distribution
//! 4. anchor probability mass within ±1 bucket of its true bucket
//! 5. neighbor probability mass within ±1 bucket of its true bucket
//! 6. date delta in years (days / 365)

use serde::{Deserialize, Serialize};

use super::candidates::{CandidatePair, DateLabel};
use super::date_model::DatePredictor;
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::linear::{FitOptions, LogisticRegression};

pub const NUM_FEATURES: usize = 7;

pub type PairFeatures = [f64; NUM_FEATURES];

pub fn pair_features(pair: &CandidatePair, anchor: &Document, neighbor: &Document, dates: &DatePredictor) -> PairFeatures {
    [
        pair.max_sim(),
        pair.mean_sim(),
        dates.entropy(anchor),
        dates.entropy(neighbor),
        dates.mass_near_truth(anchor),
        dates.mass_near_truth(neighbor),
        pair.date_delta_days as f64 / 365.0,
    ]
}

/// A candidate pair with its date label and denoiser features.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPair {
    pub pair: CandidatePair,
    pub label: DateLabel,
    pub features: PairFeatures,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl DenoiserModel {
    pub fn zeros() -> Self {
        DenoiserModel {
            weights: vec![0.0; NUM_FEATURES],
            bias: 0.0,
        }
    }

    fn as_logreg(&self) -> LogisticRegression {
        LogisticRegression {
            weights: self.weights.clone(),
            bias: self.bias,
        }
    }

    /// Probability that the pair is a true negative.
    pub fn probability(&self, features: &PairFeatures) -> f64 {
        self.as_logreg().probability(features)
    }

    /// Mean logistic loss and gradient (∂weights, ∂bias).
    pub fn loss_and_grad(&self, examples: &[(PairFeatures, bool)], l2: f64) -> (f64, Vec<f64>, f64) {
        let (xs, ys) = split(examples);
        self.as_logreg().loss_and_grad(&xs, &ys, l2)
    }

    pub fn accuracy(&self, examples: &[(PairFeatures, bool)]) -> f64 {
        let hits = examples
            .iter()
            .filter(|(x, y)| (self.probability(x) >= 0.5) == *y)
            .count();
        hits as f64 / examples.len().max(1) as f64
    }
}

fn split(examples: &[(PairFeatures, bool)]) -> (Vec<Vec<f64>>, Vec<bool>) {
    examples.iter().map(|(x, y)| (x.to_vec(), *y)).unzip()
}

pub fn denoiser_fit_options() -> FitOptions {
    FitOptions {
        epochs: 3000,
        learning_rate: 0.5,
        l2: 1e-4,
    }
}

pub fn train_denoiser(labeled: &[(PairFeatures, bool)]) -> Result<DenoiserModel> {
    let positives = labeled.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == labeled.len() {
        return Err(Error::invalid("denoiser training data must contain both classes"));
    }
    if labeled.len() < 50 {
        log::warn!("training the denoiser on only {} labeled pairs", labeled.len());
    }
    let (xs, ys) = split(labeled);
    let model = LogisticRegression::fit(&xs, &ys, &denoiser_fit_options())?;
    Ok(DenoiserModel {
        weights: model.weights,
        bias: model.bias,
    })
}

/// Keeps negatives scored at or above `threshold`; positives pass through,
/// discards are dropped.
pub fn apply_denoiser(model: &DenoiserModel, pairs: &[LabeledPair], threshold: f64) -> Vec<LabeledPair> {
    pairs
        .iter()
        .filter(|p| match p.label {
            DateLabel::Positive => true,
            DateLabel::Negative => model.probability(&p.features) >= threshold,
            DateLabel::Discard => false,
        })
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::rng;
    use rand::Rng as _;

    fn synthetic(n: usize, seed: u64) -> Vec<(PairFeatures, bool)> {
        let mut r = rng(seed, 0);
        (0..n)
            .map(|i| {
                let neg = i % 2 == 0;
                // True negatives: low anchor entropy; false negatives: evergreen.
                let ent = if neg { r.random_range(0.0..0.8) } else { r.random_range(1.5..2.5) };
                let mut f = [0.0; NUM_FEATURES];
                f[0] = r.random_range(0.3..0.9);
                f[1] = f[0] * 0.8;
                f[2] = ent;
                f[3] = ent + r.random_range(-0.2..0.2);
                f[4] = if neg { 0.9 } else { 0.2 };
                f[5] = f[4];
                f[6] = r.random_range(1.0..3.0);
                (f, neg)
            })
            .collect()
    }

    #[test]
    fn separable_features_are_learned() {
        let data = synthetic(200, 4);
        let m = train_denoiser(&data).unwrap();
        assert!(m.accuracy(&data) >= 0.95);
    }

    #[test]
    fn zero_model_is_undecided() {
        assert_eq!(DenoiserModel::zeros().probability(&[0.3; NUM_FEATURES]), 0.5);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let data = synthetic(60, 5);
        let mut m = DenoiserModel::zeros();
        for (i, w) in m.weights.iter_mut().enumerate() {
            *w = 0.3 * (i as f64 - 3.0);
        }
        m.bias = -0.2;
        let (_, gw, gb) = m.loss_and_grad(&data, 0.0);
        let eps = 1e-6;
        let check = |analytic: f64, perturb: &dyn Fn(&mut DenoiserModel, f64)| {
            let mut plus = m.clone();
            perturb(&mut plus, eps);
            let mut minus = m.clone();
            perturb(&mut minus, -eps);
            let fd = (plus.loss_and_grad(&data, 0.0).0 - minus.loss_and_grad(&data, 0.0).0) / (2.0 * eps);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-12);
            assert!(rel < 1e-4, "analytic {analytic} vs fd {fd}");
        };
        for i in 0..NUM_FEATURES {
            check(gw[i], &|m, e| m.weights[i] += e);
        }
        check(gb, &|m, e| m.bias += e);
    }

    #[test]
    fn single_class_is_rejected() {
        let data: Vec<_> = synthetic(60, 6).into_iter().map(|(f, _)| (f, true)).collect();
        assert!(train_denoiser(&data).is_err());
    }

    fn labeled(label: DateLabel, f: PairFeatures) -> LabeledPair {
        LabeledPair {
            pair: CandidatePair {
                anchor_id: "a".into(),
                neighbor_id: "b".into(),
                sims: Default::default(),
                date_delta_days: 0,
            },
            label,
            features: f,
        }
    }

    #[test]
    fn thresholds_bound_the_filter() {
        let m = train_denoiser(&synthetic(200, 7)).unwrap();
        let pairs: Vec<_> = synthetic(40, 8)
            .into_iter()
            .map(|(f, _)| labeled(DateLabel::Negative, f))
            .chain([labeled(DateLabel::Positive, [0.0; NUM_FEATURES])])
            .collect();
        assert_eq!(apply_denoiser(&m, &pairs, 0.0).len(), pairs.len());
        let strict = apply_denoiser(&m, &pairs, 1.0);
        assert!(strict
            .iter()
            .all(|p| p.label == DateLabel::Positive || m.probability(&p.features) == 1.0));
        assert!(strict.iter().any(|p| p.label == DateLabel::Positive));
    }

    #[test]
    fn evergreen_pairs_go_first() {
        let data = synthetic(200, 9);
        let m = train_denoiser(&data).unwrap();
        let pairs: Vec<_> = data.iter().map(|(f, _)| labeled(DateLabel::Negative, *f)).collect();
        let truth: Vec<bool> = data.iter().map(|(_, y)| *y).collect();
        // At a mid threshold most surviving pairs are true negatives and most
        // evergreen (false) negatives are gone.
        let kept = apply_denoiser(&m, &pairs, 0.5);
        let kept_true = kept
            .iter()
            .filter(|k| truth[pairs.iter().position(|p| p == *k).unwrap()])
            .count();
        assert!(kept_true as f64 / kept.len() as f64 > 0.9);
        let evergreen_scores: Vec<f64> = data.iter().filter(|(_, y)| !y).map(|(f, _)| m.probability(f)).collect();
        let event_scores: Vec<f64> = data.iter().filter(|(_, y)| *y).map(|(f, _)| m.probability(f)).collect();
        let max_evergreen = evergreen_scores.iter().copied().fold(0.0, f64::max);
        let min_event = event_scores.iter().copied().fold(1.0, f64::min);
        assert!(max_evergreen < min_event);
    }
}
