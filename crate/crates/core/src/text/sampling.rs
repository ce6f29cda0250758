//! Exponentially smoothed re-sampling across unevenly sized groups
//! (languages, or (language, task) datasets).
//!
//! With counts `n_1 ≥ n_2 ≥ …` and shares `p_i = n_i / Σ n_j`, group `i` is
//! re-sampled to an expected size `m_i = n_1 · (p_i / p_1)^α`.

use std::collections::BTreeMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng;

pub const DEFAULT_ALPHA: f64 = 0.7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub alpha: f64,
    pub counts: BTreeMap<String, usize>,
}

impl SmoothingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.counts.values().any(|&n| n == 0) {
            return Err(Error::Config("smoothing counts must be positive".into()));
        }
        Ok(())
    }
}

/// `m_i` for each size, in input order.
pub fn smoothed_sizes(sizes: &[f64], alpha: f64) -> Vec<f64> {
    let total: f64 = sizes.iter().sum();
    let n1 = sizes.iter().copied().fold(0.0, f64::max);
    if total <= 0.0 || n1 <= 0.0 {
        return vec![0.0; sizes.len()];
    }
    let p1 = n1 / total;
    sizes.iter().map(|&n| n1 * ((n / total) / p1).powf(alpha)).collect()
}

pub fn smooth_expected_counts(config: &SmoothingConfig) -> Result<BTreeMap<String, f64>> {
    config.validate()?;
    let sizes: Vec<f64> = config.counts.values().map(|&n| n as f64).collect();
    let m = smoothed_sizes(&sizes, config.alpha);
    Ok(config.counts.keys().cloned().zip(m).collect())
}

/// Replicates every document of a group `⌊m_i/n_i⌋` times plus one more with
/// probability equal to the fractional part. Languages without an expected
/// count are left out.
pub fn resample(
    docs_by_language: &BTreeMap<String, Vec<String>>,
    expected: &BTreeMap<String, f64>,
    seed: u64,
) -> Vec<String> {
    let mut r = rng(seed, 0x5a4d);
    let mut out = Vec::new();
    for (lang, docs) in docs_by_language {
        let (Some(&m), false) = (expected.get(lang), docs.is_empty()) else {
            continue;
        };
        let ratio = m / docs.len() as f64;
        let whole = ratio.floor() as usize;
        let frac = ratio - ratio.floor();
        for d in docs {
            let copies = whole + usize::from(r.random::<f64>() < frac);
            out.extend(std::iter::repeat_n(d.clone(), copies));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(alpha: f64, counts: &[(&str, usize)]) -> SmoothingConfig {
        SmoothingConfig {
            alpha,
            counts: counts.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }

    #[test]
    fn alpha_one_is_identity() {
        let m = smooth_expected_counts(&config(1.0, &[("en", 1000), ("de", 10), ("fr", 250)])).unwrap();
        assert!((m["en"] - 1000.0).abs() < 1e-9);
        assert!((m["de"] - 10.0).abs() < 1e-9);
        assert!((m["fr"] - 250.0).abs() < 1e-9);
    }

    #[test]
    fn alpha_zero_flattens() {
        let m = smooth_expected_counts(&config(0.0, &[("en", 1000), ("de", 10)])).unwrap();
        assert_eq!(m["de"], 1000.0);
        assert_eq!(m["en"], 1000.0);
    }

    #[test]
    fn formula_value() {
        let m = smooth_expected_counts(&config(0.7, &[("en", 1000), ("de", 10)])).unwrap();
        let oracle = 1000.0 * 0.01f64.powf(0.7);
        assert!((m["de"] - oracle).abs() < 1e-9);
        assert!((m["de"] - 39.81).abs() < 1e-2);
    }

    #[test]
    fn bad_alpha_rejected() {
        assert!(smooth_expected_counts(&config(1.5, &[("en", 1)])).is_err());
    }

    #[test]
    fn integral_expectation_is_identity() {
        let docs: BTreeMap<String, Vec<String>> = [("en".to_string(), vec!["a".to_string(), "b".to_string()])].into();
        let m: BTreeMap<String, f64> = [("en".to_string(), 2.0)].into();
        assert_eq!(resample(&docs, &m, 5), vec!["a", "b"]);
    }

    #[test]
    fn fractional_replication_is_two_or_three() {
        let docs: BTreeMap<String, Vec<String>> = [("de".to_string(), (0..20).map(|i| i.to_string()).collect())].into();
        let m: BTreeMap<String, f64> = [("de".to_string(), 50.0)].into();
        let out = resample(&docs, &m, 1);
        for d in &docs["de"] {
            let c = out.iter().filter(|x| *x == d).count();
            assert!(c == 2 || c == 3);
        }
        assert_eq!(out, resample(&docs, &m, 1));
    }
}
