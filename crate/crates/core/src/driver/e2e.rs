//! Synthetic end-to-end run: generate, ingest, mine, pack, train, evaluate.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stages;
use super::synth::{self, Origin, SynthConfig, SynthCorpus};
use crate::ann::{Index, IndexConfig};
use crate::aux_embed::{embed_all, EmbedTables, Space};
use crate::corpus::{dedup, ingest, Document, DocumentRecord, format_date};
use crate::encoder::{forward, init, EncoderConfig, EncoderInput, EncoderOutput, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::{kmeans_ari, linear_probe, triplet_accuracy, ProbeOptions};
use crate::mining::augment::title_body;
use crate::mining::candidates::neighbor_lists;
use crate::mining::{mine_triplets, AugmentedTriplet, DocTriplet, MiningConfig, MiningInputs, MiningReport};
use crate::text::{tokenize, PackerConfig, Vocab};
use crate::topics::{balance_sample, derive_examples, mine_hub_topics, positive_ratio, TopicExample};
use crate::trainer::{train, TrainConfig};
use crate::util::fnv1a64;

#[derive(Debug, Clone)]
pub struct E2eConfig {
    pub synth: SynthConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub mining: MiningConfig,
    pub index: IndexConfig,
    pub packer: PackerConfig,
    pub min_words: usize,
    pub max_len: usize,
    /// One anchor in this many is held out of training.
    pub heldout_every: u64,
    pub topic_positive_ratio: f64,
    pub kmeans_restarts: usize,
    pub probe: ProbeOptions,
}

impl Default for E2eConfig {
    fn default() -> Self {
        E2eConfig {
            synth: SynthConfig::default(),
            encoder: EncoderConfig {
                vocab_size: 0,
                embed_dim: 32,
                num_transformer_blocks: 1,
                num_heads: 4,
                hidden_dim: 64,
                semantic_dim: 32,
                num_topics: 0,
                seed: 0,
            },
            train: TrainConfig {
                learning_rate: 5e-3,
                temperature: 0.2,
                batch_size: 8,
                virtual_shards: 2,
                steps: 2000,
                ..TrainConfig::default()
            },
            mining: MiningConfig::default(),
            index: IndexConfig {
                num_partitions: 8,
                probes: 8,
                ..IndexConfig::default()
            },
            packer: PackerConfig {
                capacity: 64,
                max_len: 256,
                min_proportion: 0.9,
            },
            min_words: 20,
            max_len: 64,
            heldout_every: 5,
            topic_positive_ratio: 0.25,
            kmeans_restarts: 10,
            probe: ProbeOptions::default(),
        }
    }
}

impl E2eConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.synth.seed = seed;
        self.encoder.seed = seed;
        self.train.seed = seed;
        self.index.seed = seed;
        self
    }
}

/// Embedding quality of one encoder state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub heldout_triplet_accuracy: f64,
    pub story_ari: f64,
    pub topic_probe_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct E2eReport {
    pub seed: u64,
    pub documents: usize,
    pub mining: MiningReport,
    pub heldout_doc_triplets: usize,
    pub train_triplets: usize,
    pub topic_examples: usize,
    pub topic_positive_ratio: f64,
    pub vocab_size: usize,
    pub pack_compression_ratio: f64,
    pub positive_max_delta_days: u64,
    pub negative_min_delta_days: u64,
    pub steps: usize,
    pub final_triplet_loss: f64,
    pub final_topic_loss: f64,
    pub random_init: Quality,
    pub trained: Quality,
}

impl E2eReport {
    /// Flat `key=value` lines.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let q = |prefix: &str, q: &Quality| {
            vec![
                (format!("{prefix}.heldout_triplet_accuracy"), format!("{:.6}", q.heldout_triplet_accuracy)),
                (format!("{prefix}.story_ari"), format!("{:.6}", q.story_ari)),
                (format!("{prefix}.topic_probe_accuracy"), format!("{:.6}", q.topic_probe_accuracy)),
            ]
        };
        let m = &self.mining;
        let mut kv = vec![
            ("seed".to_string(), self.seed.to_string()),
            ("documents".into(), self.documents.to_string()),
            ("mining.candidates".into(), m.candidates.to_string()),
            ("mining.positives".into(), m.positives.to_string()),
            ("mining.negatives".into(), m.negatives.to_string()),
            ("mining.discarded".into(), m.discarded.to_string()),
            ("mining.negatives_after_denoise".into(), m.negatives_after_denoise.to_string()),
            ("mining.doc_triplets".into(), m.doc_triplets.to_string()),
            ("mining.augmented_triplets".into(), m.augmented_triplets.to_string()),
            ("mining.translated_triplets".into(), m.translated_triplets.to_string()),
            (
                "mining.denoiser_training_accuracy".into(),
                m.denoiser_training_accuracy.map_or("none".into(), |a| format!("{a:.6}")),
            ),
            ("mining.positive_max_delta_days".into(), self.positive_max_delta_days.to_string()),
            ("mining.negative_min_delta_days".into(), self.negative_min_delta_days.to_string()),
            ("heldout_doc_triplets".into(), self.heldout_doc_triplets.to_string()),
            ("train_triplets".into(), self.train_triplets.to_string()),
            ("topic_examples".into(), self.topic_examples.to_string()),
            ("topic_positive_ratio".into(), format!("{:.6}", self.topic_positive_ratio)),
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("pack_compression_ratio".into(), format!("{:.6}", self.pack_compression_ratio)),
            ("steps".into(), self.steps.to_string()),
            ("final_triplet_loss".into(), format!("{:.6}", self.final_triplet_loss)),
            ("final_topic_loss".into(), format!("{:.6}", self.final_topic_loss)),
        ];
        kv.extend(q("random_init", &self.random_init));
        kv.extend(q("trained", &self.trained));
        kv
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for (k, v) in self.to_key_values() {
            writeln!(w, "{k}={v}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

fn to_record(d: &Document) -> DocumentRecord {
    DocumentRecord {
        id: d.id.clone(),
        title: d.title.clone(),
        body: d.body.clone(),
        anchor_texts: d.anchor_texts.clone(),
        byline_date: Some(format_date(d.byline_date)),
        publisher: Some(d.publisher.clone()),
        language: d.language.clone(),
        entity_ids: d.entity_ids.clone(),
        image_hash: d.image_hash.as_ref().map(|h| h.to_hex()),
    }
}

pub fn encode_all(params: &EncoderParams, sequences: &[Vec<u32>]) -> Result<Vec<EncoderOutput>> {
    sequences
        .par_iter()
        .map(|ids| forward(params, &EncoderInput::new(ids.clone()), false))
        .collect()
}

/// Held-out evaluation material, tokenized once.
struct EvalSet {
    heldout: Vec<[Vec<u32>; 3]>,
    story_docs: Vec<Vec<u32>>,
    story_labels: Vec<usize>,
    probe_train: Vec<(Vec<u32>, usize)>,
    probe_test: Vec<(Vec<u32>, usize)>,
    k: usize,
}

fn quality(params: &EncoderParams, set: &EvalSet, cfg: &E2eConfig) -> Result<Quality> {
    let flat: Vec<Vec<u32>> = set.heldout.iter().flat_map(|t| t.iter().cloned()).collect();
    let out = encode_all(params, &flat)?;
    let triplets: Vec<_> = out
        .chunks_exact(3)
        .map(|c| (c[0].semantic.clone(), c[1].semantic.clone(), c[2].semantic.clone()))
        .collect();
    let stories = encode_all(params, &set.story_docs)?;
    let sem: Vec<Vec<f64>> = stories.into_iter().map(|o| o.semantic).collect();
    let ari = kmeans_ari(&sem, &set.story_labels, set.k, cfg.synth.seed, cfg.kmeans_restarts)?;
    let pooled = |xs: &[(Vec<u32>, usize)]| -> Result<Vec<(Vec<f64>, usize)>> {
        let ids: Vec<Vec<u32>> = xs.iter().map(|(t, _)| t.clone()).collect();
        Ok(encode_all(params, &ids)?
            .into_iter()
            .zip(xs)
            .map(|(o, (_, c))| (o.pooled, *c))
            .collect())
    };
    let probe = linear_probe(&pooled(&set.probe_train)?, &pooled(&set.probe_test)?, &cfg.probe)?;
    Ok(Quality {
        heldout_triplet_accuracy: triplet_accuracy(&triplets),
        story_ari: ari,
        topic_probe_accuracy: probe,
    })
}

fn is_heldout(anchor_id: &str, every: u64) -> bool {
    every > 0 && fnv1a64(anchor_id.as_bytes()) % every == 0
}

pub const RAW_CORPUS: &str = "raw_corpus.jsonl";
pub const SYNTH_CONFIG: &str = "synth.conf";

fn tsv(path: &Path, rows: impl Iterator<Item = (String, String)>) -> Result<()> {
    let text: String = rows.map(|(a, b)| format!("{a}\t{b}\n")).collect();
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the generated corpus and its side inputs as ordinary pipeline
/// input files, plus a `synth.conf` that points the stages at them.
pub fn export_inputs(corpus: &SynthCorpus, cfg: &E2eConfig, dir: &Path) -> Result<()> {
    let records: Vec<DocumentRecord> = corpus.docs.iter().map(to_record).collect();
    crate::mining::write_jsonl(&dir.join(RAW_CORPUS), &records)?;
    corpus.entity_table.save(&dir.join("entity_table.tsv"))?;
    corpus.token_table.save(&dir.join("token_table.tsv"))?;
    crate::mining::write_jsonl(&dir.join("labels.jsonl"), &corpus.labels)?;
    crate::mining::write_jsonl(&dir.join("hubs.jsonl"), &corpus.hubs)?;
    tsv(&dir.join("lexicon.tsv"), corpus.lexicon_entries.iter().cloned())?;
    let mut dict: Vec<(String, String)> = corpus.translator.entries.clone().into_iter().collect();
    dict.sort();
    tsv(&dir.join("dictionary.tsv"), dict.into_iter())?;
    let eval: Vec<stages::EvalRecord> = corpus
        .eval_docs
        .iter()
        .map(|d| stages::EvalRecord {
            text: format!("{} [SEP] {}", d.title, d.body),
            cluster: match d.origin {
                Origin::Story { story, .. } => Some(format!("story{story}")),
                Origin::Evergreen { .. } => None,
            },
            topic: Some(corpus.topic_names[d.topic].clone()),
        })
        .collect();
    crate::mining::write_jsonl(&dir.join("eval_data.jsonl"), &eval)?;

    let abs = |name: &str| dir.join(name).display().to_string();
    let e = &cfg.encoder;
    let t = &cfg.train;
    let conf = [
        ("work_dir", dir.display().to_string()),
        ("corpus", abs(RAW_CORPUS)),
        ("entity_table", abs("entity_table.tsv")),
        ("token_table", abs("token_table.tsv")),
        ("labels", abs("labels.jsonl")),
        ("dictionary", abs("dictionary.tsv")),
        ("hubs", abs("hubs.jsonl")),
        ("lexicon", abs("lexicon.tsv")),
        ("eval_data", abs("eval_data.jsonl")),
        ("seed", cfg.synth.seed.to_string()),
        ("min_words", cfg.min_words.to_string()),
        ("num_partitions", cfg.index.num_partitions.to_string()),
        ("probes", cfg.index.probes.to_string()),
        ("topic_positive_ratio", cfg.topic_positive_ratio.to_string()),
        ("max_len", cfg.max_len.to_string()),
        ("pack_capacity", cfg.packer.capacity.to_string()),
        ("pack_max_len", cfg.packer.max_len.to_string()),
        ("embed_dim", e.embed_dim.to_string()),
        ("num_blocks", e.num_transformer_blocks.to_string()),
        ("num_heads", e.num_heads.to_string()),
        ("hidden_dim", e.hidden_dim.to_string()),
        ("semantic_dim", e.semantic_dim.to_string()),
        ("temperature", t.temperature.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("learning_rate", t.learning_rate.to_string()),
        ("steps", t.steps.to_string()),
        ("virtual_shards", t.virtual_shards.to_string()),
    ];
    let text: String = conf.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    let path = dir.join(SYNTH_CONFIG);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Artifacts of the mining and data preparation half of the run.
pub struct Prepared {
    pub corpus: SynthCorpus,
    pub docs: Vec<Document>,
    pub mining: MiningReport,
    pub doc_triplets: Vec<DocTriplet>,
    pub triplets: Vec<AugmentedTriplet>,
    pub topic_examples: Vec<TopicExample>,
    pub vocab: Vocab,
    pub compression_ratio: f64,
}

pub fn prepare(cfg: &E2eConfig, work_dir: &Path) -> Result<Prepared> {
    let corpus = synth::generate(&cfg.synth)?;
    export_inputs(&corpus, cfg, work_dir)?;
    let raw = work_dir.join(RAW_CORPUS);
    let (docs, stats) = ingest(&raw, cfg.min_words)?;
    let docs = dedup(docs);
    log::info!("ingested {} documents ({} filtered)", docs.len(), stats.filtered);
    crate::corpus::write_documents(&work_dir.join(stages::DOCUMENTS), &docs)?;

    let tables = EmbedTables {
        entity_table: corpus.entity_table.clone(),
        token_table: corpus.token_table.clone(),
    };
    let mut lists = BTreeMap::new();
    for space in Space::ALL {
        let emb = embed_all(&docs, space, &tables)?;
        if emb.len() < cfg.index.num_partitions {
            continue;
        }
        let index = Index::build(&emb, cfg.index.clone())?;
        lists.insert(space, neighbor_lists(&index, cfg.mining.top_k)?);
    }
    let mined = mine_triplets(
        &MiningInputs {
            docs: &docs,
            neighbor_lists: lists,
            token_table: Some(&corpus.token_table),
            labels: &corpus.labels,
            translator: Some(&corpus.translator),
        },
        &cfg.mining,
    )?;
    crate::mining::write_jsonl(&work_dir.join(stages::TRIPLETS), &mined.triplets)?;

    let doc_topics = mine_hub_topics(&corpus.hubs, &corpus.lexicon)?;
    let examples = derive_examples(&doc_topics, &corpus.hubs, &corpus.lexicon);
    let topic_examples = balance_sample(&examples, cfg.topic_positive_ratio, cfg.synth.seed)?;
    crate::mining::write_jsonl(&work_dir.join(stages::TOPICS), &topic_examples)?;

    let vocab = stages::build_vocab(&docs, &mined.triplets);
    vocab.save(&work_dir.join(stages::VOCAB))?;
    let ratio = stages::pack_documents(&docs, &vocab, cfg.max_len, &cfg.packer, &work_dir.join(stages::PACKED))?;

    Ok(Prepared {
        compression_ratio: ratio,
        corpus,
        docs,
        mining: mined.report,
        doc_triplets: mined.doc_triplets,
        triplets: mined.triplets,
        topic_examples,
        vocab,
    })
}

fn eval_set(p: &Prepared, cfg: &E2eConfig) -> EvalSet {
    let by_id: HashMap<&str, &Document> = p.docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let tok = |text: &str| tokenize(text, &p.vocab, cfg.max_len);
    let heldout = p
        .doc_triplets
        .iter()
        .filter(|t| is_heldout(&t.anchor_id, cfg.heldout_every))
        .map(|t| {
            [&t.anchor_id, &t.positive_id, &t.negative_id].map(|id| tok(&title_body(by_id[id.as_str()])))
        })
        .collect();
    let mut story_docs = Vec::new();
    let mut story_labels = Vec::new();
    let mut probe_train = Vec::new();
    let mut probe_test = Vec::new();
    for (i, d) in p.corpus.eval_docs.iter().enumerate() {
        let ids = tok(&format!("{} [SEP] {}", d.title, d.body));
        if let Origin::Story { story, .. } = d.origin {
            story_docs.push(ids.clone());
            story_labels.push(story);
        }
        if i % 2 == 0 {
            probe_train.push((ids, d.topic));
        } else {
            probe_test.push((ids, d.topic));
        }
    }
    EvalSet {
        heldout,
        story_docs,
        story_labels,
        probe_train,
        probe_test,
        k: cfg.synth.num_stories(),
    }
}

fn delta_extremes(p: &Prepared) -> (u64, u64) {
    let max_pos = p.doc_triplets.iter().map(|t| t.positive_delta_days).max().unwrap_or(0);
    let min_neg = p.doc_triplets.iter().map(|t| t.negative_delta_days).min().unwrap_or(u64::MAX);
    (max_pos, min_neg)
}

fn tail_mean(losses: &[f64], n: usize) -> f64 {
    let tail = &losses[losses.len().saturating_sub(n)..];
    if tail.is_empty() {
        return f64::NAN;
    }
    tail.iter().sum::<f64>() / tail.len() as f64
}

/// Runs the whole experiment, writing every intermediate artifact, the step
/// metrics and the final report into `work_dir`.
pub fn run(cfg: &E2eConfig, work_dir: &Path) -> Result<E2eReport> {
    std::fs::create_dir_all(work_dir).map_err(|e| Error::io(work_dir, e))?;
    let prepared = prepare(cfg, work_dir)?;
    let topic_index: BTreeMap<String, usize> = prepared
        .corpus
        .topic_names
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i))
        .collect();
    let data = stages::train_data(
        &prepared.docs,
        &prepared.triplets,
        &prepared.topic_examples,
        &topic_index,
        &prepared.vocab,
        cfg.max_len,
        |t| !is_heldout(&t.anchor_id, cfg.heldout_every),
    );
    let set = eval_set(&prepared, cfg);

    let enc = EncoderConfig {
        vocab_size: prepared.vocab.len(),
        num_topics: topic_index.len(),
        ..cfg.encoder.clone()
    };
    let mut params = init(&enc)?;
    let random_init = quality(&params, &set, cfg)?;
    log::info!("random init: {random_init:?}");

    let metrics_path = work_dir.join(stages::METRICS);
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut w = BufWriter::new(file);
    let steps = train(&mut params, &data, &cfg.train, Some(&mut w))?;
    w.flush().map_err(|e| Error::io(&metrics_path, e))?;
    crate::encoder::save_checkpoint(&params, &work_dir.join(stages::CHECKPOINT))?;
    let trained = quality(&params, &set, cfg)?;
    log::info!("trained: {trained:?}");

    let losses = |task| -> Vec<f64> { steps.iter().filter(|s| s.task.task == task).map(|s| s.loss).collect() };
    let (positive_max_delta_days, negative_min_delta_days) = delta_extremes(&prepared);
    let report = E2eReport {
        seed: cfg.synth.seed,
        documents: prepared.docs.len(),
        heldout_doc_triplets: set.heldout.len(),
        train_triplets: data.triplets.values().map(Vec::len).sum(),
        topic_examples: prepared.topic_examples.len(),
        topic_positive_ratio: positive_ratio(&prepared.topic_examples),
        vocab_size: prepared.vocab.len(),
        pack_compression_ratio: prepared.compression_ratio,
        positive_max_delta_days,
        negative_min_delta_days,
        steps: steps.len(),
        final_triplet_loss: tail_mean(&losses(crate::trainer::Task::Triplet), 100),
        final_topic_loss: tail_mean(&losses(crate::trainer::Task::Topic), 100),
        mining: prepared.mining,
        random_init,
        trained,
    };
    report.write(&work_dir.join(stages::E2E_REPORT))?;
    Ok(report)
}
