//! Alternate multitask training: each step draws one (language, task)
//! dataset, builds a batch from it and applies one Adam update.

pub mod loss;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{backward, forward_with_cache, EncoderInput, EncoderParams, ForwardCache};
use crate::error::{Error, Result};
use crate::text::sampling::smoothed_sizes;
use crate::util::rng;

pub use loss::{bce_grad, bce_loss, infonce_batch, infonce_loss, softmax_nll, InfoNceBatch};

/// Examples per gradient work unit. Partial gradients are summed in unit
/// order, so results do not depend on the thread count.
const GRAD_CHUNK: usize = 4;

const TASK_STREAM: u64 = 0x7a5c << 32;
const BATCH_STREAM: u64 = 0xba7c << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub temperature: f64,
    /// Triplets per virtual shard.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub steps: usize,
    pub virtual_shards: usize,
    /// Gather semantic vectors across shards before the softmax.
    pub cross_shard_negatives: bool,
    pub smoothing_alpha: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            temperature: 0.05,
            batch_size: 64,
            learning_rate: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 1000,
            virtual_shards: 1,
            cross_shard_negatives: true,
            smoothing_alpha: 0.7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.batch_size == 0 || self.virtual_shards == 0 {
            return Err(Error::Config("batch_size and virtual_shards must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.smoothing_alpha) {
            return Err(Error::Config("smoothing_alpha outside [0, 1]".into()));
        }
        Ok(())
    }

    pub fn global_batch(&self) -> usize {
        self.batch_size * self.virtual_shards
    }

    /// Size of the group each anchor draws in-batch negatives from.
    pub fn negative_group(&self) -> usize {
        if self.cross_shard_negatives {
            self.global_batch()
        } else {
            self.batch_size
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletExample {
    pub anchor: Vec<u32>,
    pub positive: Vec<u32>,
    pub negative: Vec<u32>,
    #[serde(default)]
    pub positive_translated: bool,
    #[serde(default)]
    pub negative_translated: bool,
    pub language: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicDoc {
    pub tokens: Vec<u32>,
    /// `(topic index, is positive)` for every labeled topic.
    pub labels: Vec<(usize, bool)>,
    pub language: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Triplet,
    Topic,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub language: String,
    pub task: Task,
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = match self.task {
            Task::Triplet => "triplet",
            Task::Topic => "topic",
        };
        write!(f, "{}/{t}", self.language)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub key: TaskKey,
    pub size: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainData {
    pub triplets: BTreeMap<String, Vec<TripletExample>>,
    pub topics: BTreeMap<String, Vec<TopicDoc>>,
}

impl TrainData {
    pub fn from_examples(triplets: Vec<TripletExample>, topics: Vec<TopicDoc>) -> Self {
        let mut data = TrainData::default();
        for t in triplets {
            data.triplets.entry(t.language.clone()).or_default().push(t);
        }
        for t in topics.into_iter().filter(|t| !t.labels.is_empty()) {
            data.topics.entry(t.language.clone()).or_default().push(t);
        }
        data
    }

    /// Non-empty datasets in key order.
    pub fn datasets(&self) -> Vec<TaskDataset> {
        let mut out: Vec<TaskDataset> = self
            .triplets
            .iter()
            .map(|(l, v)| (l, Task::Triplet, v.len()))
            .chain(self.topics.iter().map(|(l, v)| (l, Task::Topic, v.len())))
            .filter(|(_, _, n)| *n > 0)
            .map(|(l, task, size)| TaskDataset {
                key: TaskKey {
                    language: l.clone(),
                    task,
                },
                size,
            })
            .collect();
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out
    }
}

/// Selection probability of every dataset, proportional to its smoothed size.
pub fn task_probabilities(datasets: &[TaskDataset], alpha: f64) -> Vec<f64> {
    let sizes: Vec<f64> = datasets.iter().map(|d| d.size as f64).collect();
    let m = smoothed_sizes(&sizes, alpha);
    let total: f64 = m.iter().sum();
    m.iter().map(|x| x / total).collect()
}

/// Index of the dataset drawn at `step`; a pure function of `(seed, step)`.
pub fn sample_task(datasets: &[TaskDataset], alpha: f64, seed: u64, step: u64) -> Result<usize> {
    if datasets.is_empty() {
        return Err(Error::invalid("no training datasets"));
    }
    if datasets.iter().any(|d| d.size == 0) {
        return Err(Error::invalid("dataset sizes must be positive"));
    }
    let probs = task_probabilities(datasets, alpha);
    let u: f64 = rng(seed, TASK_STREAM | step).random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(datasets.len() - 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub id: u64,
    pub examples: Vec<TripletExample>,
    /// Anchors draw negatives from consecutive groups of this many triplets.
    pub group_size: usize,
}

/// Topic documents arranged three to a row so they share the triplet input
/// shape.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicBatch {
    pub id: u64,
    pub triples: Vec<[TopicDoc; 3]>,
}

impl TopicBatch {
    pub fn docs(&self) -> impl Iterator<Item = &TopicDoc> {
        self.triples.iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Batch {
    Triplet(TripletBatch),
    Topic(TopicBatch),
}

impl Batch {
    pub fn id(&self) -> u64 {
        match self {
            Batch::Triplet(b) => b.id,
            Batch::Topic(b) => b.id,
        }
    }
}

/// `count` indices into `0..size`: distinct when possible, otherwise with
/// replacement.
fn draw_indices(size: usize, count: usize, r: &mut crate::util::Rng) -> Vec<usize> {
    if size >= count {
        rand::seq::index::sample(r, size, count).into_vec()
    } else {
        (0..count).map(|_| r.random_range(0..size)).collect()
    }
}

pub fn make_batch(data: &TrainData, key: &TaskKey, cfg: &TrainConfig, step: u64) -> Result<Batch> {
    let mut r = rng(cfg.seed, BATCH_STREAM | step);
    let g = cfg.global_batch();
    match key.task {
        Task::Triplet => {
            let pool = data
                .triplets
                .get(&key.language)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::invalid(format!("no triplets for {key}")))?;
            Ok(Batch::Triplet(TripletBatch {
                id: step,
                examples: draw_indices(pool.len(), g, &mut r).into_iter().map(|i| pool[i].clone()).collect(),
                group_size: cfg.negative_group(),
            }))
        }
        Task::Topic => {
            let pool = data
                .topics
                .get(&key.language)
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::invalid(format!("no topic examples for {key}")))?;
            let idx = draw_indices(pool.len(), 3 * g, &mut r);
            Ok(Batch::Topic(TopicBatch {
                id: step,
                triples: idx
                    .chunks_exact(3)
                    .map(|c| [pool[c[0]].clone(), pool[c[1]].clone(), pool[c[2]].clone()])
                    .collect(),
            }))
        }
    }
}

struct Tower {
    input: EncoderInput,
    cache: ForwardCache,
    semantic: Vec<f64>,
    logits: Vec<f64>,
}

fn run_towers(params: &EncoderParams, inputs: Vec<(Vec<u32>, bool)>) -> Result<Vec<Tower>> {
    inputs
        .into_par_iter()
        .map(|(ids, stop)| {
            let input = EncoderInput::new(ids);
            let (out, cache) = forward_with_cache(params, &input, stop)?;
            Ok(Tower {
                input,
                cache,
                semantic: out.semantic,
                logits: out.logits,
            })
        })
        .collect()
}

/// Backpropagates per-tower output gradients, chunked and summed in order.
fn accumulate(params: &EncoderParams, towers: &[Tower], grads: &[(Vec<f64>, Vec<f64>)], grad: &mut [f64]) {
    let chunk = 3 * GRAD_CHUNK;
    let partials: Vec<Vec<f64>> = towers
        .par_chunks(chunk)
        .zip(grads.par_chunks(chunk))
        .map(|(ts, gs)| {
            let mut g = vec![0.0; params.num_params()];
            for (t, (ds, dl)) in ts.iter().zip(gs) {
                backward(params, &t.input, &t.cache, ds, dl, &mut g);
            }
            g
        })
        .collect();
    for p in partials {
        for (a, b) in grad.iter_mut().zip(p) {
            *a += b;
        }
    }
}

/// Loss of a triplet batch and its gradient, accumulated into `grad`.
pub fn triplet_loss_and_grad(params: &EncoderParams, batch: &TripletBatch, tau: f64, grad: &mut [f64]) -> Result<f64> {
    let inputs = batch
        .examples
        .iter()
        .flat_map(|e| {
            [
                (e.anchor.clone(), false),
                (e.positive.clone(), e.positive_translated),
                (e.negative.clone(), e.negative_translated),
            ]
        })
        .collect();
    let towers = run_towers(params, inputs)?;
    let pick = |k: usize| towers.iter().skip(k).step_by(3).map(|t| t.semantic.clone()).collect::<Vec<_>>();
    let res = infonce_batch(&pick(0), &pick(1), &pick(2), tau, batch.group_size)?;
    let zeros = vec![0.0; params.config.num_topics];
    let grads: Vec<(Vec<f64>, Vec<f64>)> = (0..batch.examples.len())
        .flat_map(|i| {
            [
                (res.d_anchor[i].clone(), zeros.clone()),
                (res.d_positive[i].clone(), zeros.clone()),
                (res.d_negative[i].clone(), zeros.clone()),
            ]
        })
        .collect();
    accumulate(params, &towers, &grads, grad);
    Ok(res.loss)
}

/// Mean BCE over labeled documents and its gradient. Documents with no
/// labeled topic are skipped; the second value counts them.
pub fn topic_loss_and_grad(params: &EncoderParams, batch: &TopicBatch, grad: &mut [f64]) -> Result<(f64, usize)> {
    let docs: Vec<&TopicDoc> = batch.docs().collect();
    let towers = run_towers(params, docs.iter().map(|d| (d.tokens.clone(), false)).collect())?;
    let labeled = docs.iter().filter(|d| !d.labels.is_empty()).count();
    let skipped = docs.len() - labeled;
    if labeled == 0 {
        return Ok((0.0, skipped));
    }
    let scale = 1.0 / labeled as f64;
    let mut total = 0.0;
    let zeros = vec![0.0; params.config.semantic_dim];
    let grads: Vec<(Vec<f64>, Vec<f64>)> = docs
        .iter()
        .zip(&towers)
        .map(|(d, t)| {
            if let Some(l) = bce_loss(&t.logits, &d.labels) {
                total += l * scale;
            }
            let dl = bce_grad(&t.logits, &d.labels).into_iter().map(|g| g * scale).collect();
            (zeros.clone(), dl)
        })
        .collect();
    accumulate(params, &towers, &grads, grad);
    Ok((total, skipped))
}

/// Loss and full gradient of one batch.
pub fn batch_loss_and_grad(params: &EncoderParams, batch: &Batch, tau: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.num_params()];
    let loss = match batch {
        Batch::Triplet(b) => triplet_loss_and_grad(params, b, tau, &mut grad)?,
        Batch::Topic(b) => topic_loss_and_grad(params, b, &mut grad)?.0,
    };
    Ok((loss, grad))
}

/// Unweighted sum of the triplet and topic losses and its gradient.
pub fn joint_loss_and_grad(
    params: &EncoderParams,
    triplets: &TripletBatch,
    topics: &TopicBatch,
    tau: f64,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.num_params()];
    let a = triplet_loss_and_grad(params, triplets, tau, &mut grad)?;
    let (b, _) = topic_loss_and_grad(params, topics, &mut grad)?;
    Ok((a + b, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(num_params: usize, cfg: &TrainConfig) -> Self {
        Adam {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            if g == 0.0 && self.m[i] == 0.0 && self.v[i] == 0.0 {
                continue;
            }
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepMetric {
    pub step: usize,
    pub task: TaskKey,
    pub loss: f64,
}

/// One Adam update on `batch`. A non-finite loss or gradient aborts with the
/// batch id in the message.
pub fn train_step(params: &mut EncoderParams, adam: &mut Adam, batch: &Batch, cfg: &TrainConfig) -> Result<f64> {
    let (loss, grad) = batch_loss_and_grad(params, batch, cfg.temperature)?;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        log::error!("non-finite loss {loss} on batch {}", batch.id());
        return Err(Error::Numeric(format!("non-finite loss {loss} on batch {}", batch.id())));
    }
    adam.step(&mut params.data, &grad);
    Ok(loss)
}

/// Runs `cfg.steps` alternate-training steps. When `metrics` is given a CSV
/// line `step,task,loss` is written per step.
pub fn train(
    params: &mut EncoderParams,
    data: &TrainData,
    cfg: &TrainConfig,
    mut metrics: Option<&mut dyn Write>,
) -> Result<Vec<StepMetric>> {
    cfg.validate()?;
    let datasets = data.datasets();
    if datasets.is_empty() {
        return Err(Error::invalid("no training examples"));
    }
    let mut adam = Adam::new(params.num_params(), cfg);
    let mut out = Vec::with_capacity(cfg.steps);
    if let Some(w) = metrics.as_deref_mut() {
        writeln!(w, "step,task,loss").map_err(|e| Error::io("metrics", e))?;
    }
    for step in 0..cfg.steps {
        let idx = sample_task(&datasets, cfg.smoothing_alpha, cfg.seed, step as u64)?;
        let key = &datasets[idx].key;
        let batch = make_batch(data, key, cfg, step as u64)?;
        let loss = train_step(params, &mut adam, &batch, cfg)?;
        if let Some(w) = metrics.as_deref_mut() {
            writeln!(w, "{step},{key},{loss}").map_err(|e| Error::io("metrics", e))?;
        }
        if step % 100 == 0 {
            log::debug!("step {step} {key} loss {loss:.4}");
        }
        out.push(StepMetric {
            step,
            task: key.clone(),
            loss,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init, EncoderConfig};

    fn datasets(sizes: &[usize]) -> Vec<TaskDataset> {
        sizes
            .iter()
            .enumerate()
            .map(|(i, &size)| TaskDataset {
                key: TaskKey {
                    language: format!("l{i}"),
                    task: Task::Triplet,
                },
                size,
            })
            .collect()
    }

    fn frequencies(sizes: &[usize], alpha: f64) -> Vec<f64> {
        let ds = datasets(sizes);
        let mut counts = vec![0usize; ds.len()];
        for step in 0..10_000 {
            counts[sample_task(&ds, alpha, 42, step).unwrap()] += 1;
        }
        counts.iter().map(|&c| c as f64 / 10_000.0).collect()
    }

    #[test]
    fn single_dataset_always_chosen() {
        assert!(frequencies(&[5], 0.7).iter().all(|&f| f == 1.0));
    }

    #[test]
    fn alpha_one_follows_sizes() {
        let f = frequencies(&[900, 100], 1.0);
        assert!((f[0] - 0.9).abs() < 0.02 && (f[1] - 0.1).abs() < 0.02);
    }

    #[test]
    fn alpha_zero_is_uniform() {
        let f = frequencies(&[900, 100, 10], 0.0);
        assert!(f.iter().all(|x| (x - 1.0 / 3.0).abs() < 0.02));
    }

    #[test]
    fn sampling_is_pure() {
        let ds = datasets(&[3, 4, 5]);
        assert_eq!(sample_task(&ds, 0.5, 1, 17).unwrap(), sample_task(&ds, 0.5, 1, 17).unwrap());
    }

    fn tiny() -> EncoderParams {
        init(&EncoderConfig {
            vocab_size: 16,
            embed_dim: 8,
            num_transformer_blocks: 1,
            num_heads: 2,
            hidden_dim: 8,
            semantic_dim: 4,
            num_topics: 2,
            seed: 1,
        })
        .unwrap()
    }

    fn triplets() -> TripletBatch {
        let ex = |a: u32, p: u32, n: u32| TripletExample {
            anchor: vec![1, a, 2],
            positive: vec![1, p, 2],
            negative: vec![1, n, 2],
            positive_translated: false,
            negative_translated: false,
            language: "en".into(),
        };
        TripletBatch {
            id: 0,
            examples: vec![ex(4, 5, 6), ex(7, 8, 9)],
            group_size: 2,
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let mut p = tiny();
        let before = p.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..Default::default()
        };
        let mut adam = Adam::new(p.num_params(), &cfg);
        train_step(&mut p, &mut adam, &Batch::Triplet(triplets()), &cfg).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn overfits_one_batch() {
        let mut p = tiny();
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            ..Default::default()
        };
        let mut adam = Adam::new(p.num_params(), &cfg);
        let batch = Batch::Triplet(triplets());
        let losses: Vec<f64> = (0..200).map(|_| train_step(&mut p, &mut adam, &batch, &cfg).unwrap()).collect();
        assert!(losses[199] < 0.1, "final loss {}", losses[199]);
        assert!(losses[199] < losses[10]);
    }
}
