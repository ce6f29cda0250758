//! Linear classifiers trained by full-batch gradient descent: multinomial
//! (softmax) regression over sparse rows and binary logistic regression over
//! dense rows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::{dot, sigmoid, softmax_in_place, softplus};

/// Sparse feature row: (column, value) pairs.
pub type SparseRow = Vec<(usize, f64)>;

pub fn dense_to_sparse(x: &[f64]) -> SparseRow {
    x.iter().copied().enumerate().collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            epochs: 300,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRegression {
    pub n_classes: usize,
    pub dim: usize,
    /// Row-major `n_classes × dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SoftmaxRegression {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        SoftmaxRegression {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
        }
    }

    pub fn logits(&self, row: &[(usize, f64)]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for &(j, x) in row {
            if j >= self.dim {
                continue;
            }
            for (c, zc) in z.iter_mut().enumerate() {
                *zc += self.weights[c * self.dim + j] * x;
            }
        }
        z
    }

    pub fn predict_proba(&self, row: &[(usize, f64)]) -> Vec<f64> {
        let mut z = self.logits(row);
        softmax_in_place(&mut z);
        z
    }

    pub fn predict(&self, row: &[(usize, f64)]) -> usize {
        argmax(&self.logits(row))
    }

    /// Mean cross-entropy plus `l2/2 · ‖W‖²`, and its gradient (weights, bias).
    pub fn loss_and_grad(&self, rows: &[SparseRow], labels: &[usize], l2: f64) -> (f64, Vec<f64>, Vec<f64>) {
        let n = rows.len().max(1) as f64;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.n_classes];
        let mut loss = 0.0;
        for (row, &y) in rows.iter().zip(labels) {
            let mut p = self.logits(row);
            let lse = crate::util::log_sum_exp(&p);
            loss += lse - p[y];
            for pc in p.iter_mut() {
                *pc = (*pc - lse).exp();
            }
            p[y] -= 1.0;
            for (c, &d) in p.iter().enumerate() {
                gb[c] += d / n;
                for &(j, x) in row {
                    if j < self.dim {
                        gw[c * self.dim + j] += d * x / n;
                    }
                }
            }
        }
        loss /= n;
        loss += 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in gw.iter_mut().zip(&self.weights) {
            *g += l2 * w;
        }
        (loss, gw, gb)
    }

    pub fn fit(rows: &[SparseRow], labels: &[usize], n_classes: usize, dim: usize, opts: &FitOptions) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::invalid("rows and labels differ in length"));
        }
        if labels.iter().any(|&y| y >= n_classes) {
            return Err(Error::invalid("label out of range"));
        }
        let mut model = SoftmaxRegression::zeros(n_classes, dim);
        for _ in 0..opts.epochs {
            let (_, gw, gb) = model.loss_and_grad(rows, labels, opts.l2);
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= opts.learning_rate * g;
            }
            for (b, g) in model.bias.iter_mut().zip(&gb) {
                *b -= opts.learning_rate * g;
            }
        }
        Ok(model)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticRegression {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticRegression {
    pub fn zeros(dim: usize) -> Self {
        LogisticRegression {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(dot(&self.weights, x) + self.bias)
    }

    /// Mean logistic loss plus `l2/2 · ‖w‖²`; returns (loss, ∂w, ∂b).
    pub fn loss_and_grad(&self, xs: &[Vec<f64>], ys: &[bool], l2: f64) -> (f64, Vec<f64>, f64) {
        let n = xs.len().max(1) as f64;
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = 0.0;
        let mut loss = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let z = dot(&self.weights, x) + self.bias;
            let t = if y { 1.0 } else { 0.0 };
            // −[t log σ(z) + (1−t) log(1−σ(z))] = softplus(z) − t·z
            loss += softplus(z) - t * z;
            let d = (sigmoid(z) - t) / n;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += d * xi;
            }
            gb += d;
        }
        loss /= n;
        loss += 0.5 * l2 * dot(&self.weights, &self.weights);
        for (g, w) in gw.iter_mut().zip(&self.weights) {
            *g += l2 * w;
        }
        (loss, gw, gb)
    }

    pub fn fit(xs: &[Vec<f64>], ys: &[bool], opts: &FitOptions) -> Result<Self> {
        let dim = xs.first().map_or(0, Vec::len);
        if xs.iter().any(|x| x.len() != dim) || xs.len() != ys.len() {
            return Err(Error::invalid("inconsistent logistic regression inputs"));
        }
        let mut model = LogisticRegression::zeros(dim);
        for _ in 0..opts.epochs {
            let (_, gw, gb) = model.loss_and_grad(xs, ys, opts.l2);
            for (w, g) in model.weights.iter_mut().zip(&gw) {
                *w -= opts.learning_rate * g;
            }
            model.bias -= opts.learning_rate * gb;
        }
        Ok(model)
    }
}
