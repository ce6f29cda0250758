//! Contrastive and multi-label losses with their gradients.

use crate::error::{Error, Result};
use crate::util::{dot, norm, softplus, sigmoid};

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = norm(v);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Numeric(format!("{what} has norm {n}")));
    }
    Ok(())
}

/// `−log softmax` of the positive among `{p, n} ∪ Z`, with similarities
/// scaled by `1/τ`.
pub fn infonce_loss(a: &[f64], p: &[f64], n: &[f64], z: &[&[f64]], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    check_unit(a, "anchor")?;
    check_unit(p, "positive")?;
    check_unit(n, "negative")?;
    for v in z {
        check_unit(v, "in-batch negative")?;
    }
    let logits: Vec<f64> = [p, n]
        .into_iter()
        .chain(z.iter().copied())
        .map(|v| dot(a, v) / tau)
        .collect();
    Ok(softmax_nll(&logits, 0))
}

/// `−log softmax(logits)[target]` with the maximum subtracted first.
pub fn softmax_nll(logits: &[f64], target: usize) -> f64 {
    let top = crate::linear::argmax(logits);
    let max = logits[top];
    // The max term is exactly 1; ln_1p keeps precision when the rest is tiny.
    let rest: f64 = logits
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, l)| (l - max).exp())
        .sum();
    (max - logits[target]) + rest.ln_1p()
}

/// Loss and gradients of a gathered triplet batch.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoNceBatch {
    pub loss: f64,
    pub d_anchor: Vec<Vec<f64>>,
    pub d_positive: Vec<Vec<f64>>,
    pub d_negative: Vec<Vec<f64>>,
    /// Candidate count per anchor, `|Z| + 2`.
    pub candidates: usize,
}

/// Mean InfoNCE over all anchors. Triplets are split into consecutive groups
/// of `group_size`; each anchor competes against the positives and negatives
/// of its own group only. With `group_size` equal to the batch length this is
/// the fully gathered batch.
pub fn infonce_batch(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    negatives: &[Vec<f64>],
    tau: f64,
    group_size: usize,
) -> Result<InfoNceBatch> {
    let b = anchors.len();
    if positives.len() != b || negatives.len() != b {
        return Err(Error::invalid("anchor, positive and negative counts differ"));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    if b == 0 {
        return Err(Error::invalid("empty triplet batch"));
    }
    if group_size == 0 || b % group_size != 0 {
        return Err(Error::invalid(format!("batch of {b} does not split into groups of {group_size}")));
    }
    for v in anchors.iter().chain(positives).chain(negatives) {
        check_unit(v, "embedding")?;
    }
    let dim = anchors[0].len();
    let mut out = InfoNceBatch {
        loss: 0.0,
        d_anchor: vec![vec![0.0; dim]; b],
        d_positive: vec![vec![0.0; dim]; b],
        d_negative: vec![vec![0.0; dim]; b],
        candidates: 2 * group_size,
    };
    let scale = 1.0 / b as f64;
    for g in (0..b).step_by(group_size) {
        let members = g..g + group_size;
        for i in members.clone() {
            // Candidate order: own p, own n, then p_j, n_j of the others.
            let mut cands: Vec<(bool, usize)> = vec![(true, i), (false, i)];
            for j in members.clone().filter(|&j| j != i) {
                cands.push((true, j));
                cands.push((false, j));
            }
            let vec_of = |&(is_pos, j): &(bool, usize)| if is_pos { &positives[j] } else { &negatives[j] };
            let logits: Vec<f64> = cands.iter().map(|c| dot(&anchors[i], vec_of(c)) / tau).collect();
            out.loss += softmax_nll(&logits, 0) * scale;
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut probs: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = probs.iter().sum();
            probs.iter_mut().for_each(|p| *p /= z);
            probs[0] -= 1.0;
            for (c, &w) in cands.iter().zip(&probs) {
                let coeff = w * scale / tau;
                let v = vec_of(c);
                for (da, x) in out.d_anchor[i].iter_mut().zip(v) {
                    *da += coeff * x;
                }
                let target = if c.0 { &mut out.d_positive[c.1] } else { &mut out.d_negative[c.1] };
                for (dv, x) in target.iter_mut().zip(&anchors[i]) {
                    *dv += coeff * x;
                }
            }
        }
    }
    Ok(out)
}

/// Labeled topics of one document: `(topic index, is positive)`.
pub type TopicLabels = [(usize, bool)];

/// Summed binary cross-entropy over the labeled topics only; `None` when
/// nothing is labeled.
pub fn bce_loss(logits: &[f64], labels: &TopicLabels) -> Option<f64> {
    if labels.is_empty() {
        return None;
    }
    Some(
        labels
            .iter()
            .map(|&(t, y)| if y { softplus(-logits[t]) } else { softplus(logits[t]) })
            .sum(),
    )
}

/// Gradient of [`bce_loss`] with respect to the logits.
pub fn bce_grad(logits: &[f64], labels: &TopicLabels) -> Vec<f64> {
    let mut g = vec![0.0; logits.len()];
    for &(t, y) in labels {
        g[t] += sigmoid(logits[t]) - if y { 1.0 } else { 0.0 };
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors_give_ln2() {
        let v = [1.0, 0.0];
        let l = infonce_loss(&v, &v, &v, &[], 1.0).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_negative_at_low_temperature() {
        let l = infonce_loss(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[], 0.05).unwrap();
        let oracle = (-20f64).exp().ln_1p();
        assert!((l - oracle).abs() < 1e-18);
        assert!((l - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn zero_vector_is_error() {
        assert!(infonce_loss(&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], &[], 1.0).is_err());
    }

    #[test]
    fn batch_gradient_matches_differences() {
        let a = vec![vec![0.6, 0.8], vec![1.0, 0.0]];
        let p = vec![vec![0.8, 0.6], vec![0.0, 1.0]];
        let n = vec![vec![-0.6, 0.8], vec![0.6, -0.8]];
        let base = infonce_batch(&a, &p, &n, 0.5, 2).unwrap();
        assert_eq!(base.candidates, 4);
        let h = 1e-6;
        for i in 0..2 {
            for k in 0..2 {
                let mut a2 = a.clone();
                a2[i][k] += h;
                let up = infonce_batch(&a2, &p, &n, 0.5, 2).unwrap().loss;
                a2[i][k] -= 2.0 * h;
                let down = infonce_batch(&a2, &p, &n, 0.5, 2).unwrap().loss;
                assert!(((up - down) / (2.0 * h) - base.d_anchor[i][k]).abs() < 1e-6);
                let mut n2 = n.clone();
                n2[i][k] += h;
                let up = infonce_batch(&a, &p, &n2, 0.5, 2).unwrap().loss;
                n2[i][k] -= 2.0 * h;
                let down = infonce_batch(&a, &p, &n2, 0.5, 2).unwrap().loss;
                assert!(((up - down) / (2.0 * h) - base.d_negative[i][k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(&[0.0], &[(0, true)]).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert!((bce_loss(&[0.0], &[(0, false)]).unwrap() - 2f64.ln()).abs() < 1e-12);
        let l = bce_loss(&[2.0, -1.0], &[(0, true), (1, false)]).unwrap();
        let oracle = (-2f64).exp().ln_1p() + (-1f64).exp().ln_1p();
        assert!((l - oracle).abs() < 1e-12);
        assert!((l - 0.4402).abs() < 1e-4);
        assert!(bce_loss(&[50.0], &[(0, true)]).unwrap() < 1e-20);
        assert_eq!(bce_loss(&[1.0], &[]), None);
    }

    #[test]
    fn unlabeled_topics_have_no_gradient() {
        let g = bce_grad(&[0.3, -2.0, 1.0], &[(1, true)]);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[2], 0.0);
        assert!(g[1] < 0.0);
    }
}
