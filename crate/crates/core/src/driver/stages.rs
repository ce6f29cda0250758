//! Pipeline stages. Each stage reads its inputs from files, writes its
//! outputs into the work directory and can be re-run.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use super::e2e::{self, encode_all, E2eConfig};
use crate::ann::Index;
use crate::aux_embed::{embed_all, read_embeddings, write_embeddings, EmbedTables, Space, VectorTable};
use crate::corpus::{dedup, ingest, read_documents, write_documents, Document};
use crate::encoder::{init, load_checkpoint, save_checkpoint, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{kmeans_ari, linear_probe, triplet_accuracy, ProbeOptions};
use crate::mining::augment::{title_body, DictionaryTranslator, Translator};
use crate::mining::candidates::neighbor_lists;
use crate::mining::{mine_triplets, read_jsonl, write_jsonl, AugmentedTriplet, DocTriplet, MiningInputs, PairLabel};
use crate::text::{compression_ratio, pack_greedy, tokenize, write_packed, PackerConfig, Vocab, VocabBuilder};
use crate::topics::{balance_sample, derive_examples, mine_hub_topics, positive_ratio, HubPage, TopicExample, TopicLexicon};
use crate::trainer::{train, TopicDoc, TrainData, TripletExample};

pub const DOCUMENTS: &str = "documents.jsonl";
pub const TRIPLETS: &str = "triplets.jsonl";
pub const DOC_TRIPLETS: &str = "doc_triplets.jsonl";
pub const MINING_REPORT: &str = "mining_report.json";
pub const TOPICS: &str = "topics.jsonl";
pub const VOCAB: &str = "vocab.txt";
pub const PACKED: &str = "packed.jsonl";
pub const CHECKPOINT: &str = "encoder.ckpt";
pub const TOPIC_IDS: &str = "topic_ids.txt";
pub const METRICS: &str = "metrics.csv";
pub const EVAL_REPORT: &str = "eval_report.txt";
pub const E2E_REPORT: &str = "report.txt";

pub fn aux_file(space: Space) -> String {
    format!("aux_{}.jsonl", space.name())
}

pub fn index_file(space: Space) -> String {
    format!("index_{}.json", space.name())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    EmbedAux,
    BuildIndex,
    MineTriplets,
    MineTopics,
    Pack,
    Train,
    Eval,
    SynthE2e,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::EmbedAux,
        Stage::BuildIndex,
        Stage::MineTriplets,
        Stage::MineTopics,
        Stage::Pack,
        Stage::Train,
        Stage::Eval,
        Stage::SynthE2e,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::EmbedAux => "embed-aux",
            Stage::BuildIndex => "build-index",
            Stage::MineTriplets => "mine-triplets",
            Stage::MineTopics => "mine-topics",
            Stage::Pack => "pack",
            Stage::Train => "train",
            Stage::Eval => "eval",
            Stage::SynthE2e => "synth-e2e",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

pub fn run(stage: Stage, cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.work_dir).map_err(|e| Error::io(&cfg.work_dir, e))?;
    match stage {
        Stage::Ingest => run_ingest(cfg),
        Stage::EmbedAux => run_embed_aux(cfg),
        Stage::BuildIndex => run_build_index(cfg),
        Stage::MineTriplets => run_mine_triplets(cfg),
        Stage::MineTopics => run_mine_topics(cfg),
        Stage::Pack => run_pack(cfg),
        Stage::Train => run_train(cfg),
        Stage::Eval => run_eval(cfg),
        Stage::SynthE2e => run_synth_e2e(cfg),
    }
}

/// A work-dir artifact that must already exist, with the stage that makes it.
fn artifact(cfg: &PipelineConfig, name: &str, producer: Stage) -> Result<PathBuf> {
    let path = cfg.work_dir.join(name);
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            path,
            hint: format!("run the `{producer}` stage first"),
        })
    }
}

/// A configured input file that must exist.
fn input(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    let path = path
        .clone()
        .ok_or_else(|| Error::Config(format!("`{key}` is not set")))?;
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingArtifact {
            path,
            hint: format!("check the `{key}` setting"),
        })
    }
}

fn optional_input(path: &Option<PathBuf>, key: &str) -> Result<Option<PathBuf>> {
    match path {
        Some(_) => input(path, key).map(Some),
        None => Ok(None),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_tables(cfg: &PipelineConfig) -> Result<EmbedTables> {
    let empty = || VectorTable::new(HashMap::new());
    Ok(EmbedTables {
        entity_table: match optional_input(&cfg.entity_table, "entity_table")? {
            Some(p) => VectorTable::load(&p)?,
            None => empty()?,
        },
        token_table: match optional_input(&cfg.token_table, "token_table")? {
            Some(p) => VectorTable::load(&p)?,
            None => empty()?,
        },
    })
}

fn run_ingest(cfg: &PipelineConfig) -> Result<()> {
    let corpus = input(&cfg.corpus, "corpus")?;
    let (docs, stats) = ingest(&corpus, cfg.min_words)?;
    let before = docs.len();
    let docs = dedup(docs);
    log::info!(
        "ingested {} documents, {} duplicates removed, {} filtered",
        docs.len(),
        before - docs.len(),
        stats.filtered
    );
    write_documents(&cfg.work_dir.join(DOCUMENTS), &docs)
}

fn run_embed_aux(cfg: &PipelineConfig) -> Result<()> {
    let docs = read_documents(&artifact(cfg, DOCUMENTS, Stage::Ingest)?)?;
    let tables = load_tables(cfg)?;
    for space in Space::ALL {
        let emb = embed_all(&docs, space, &tables)?;
        log::info!("{} space: {} of {} documents embedded", space.name(), emb.len(), docs.len());
        write_embeddings(&cfg.work_dir.join(aux_file(space)), &emb)?;
    }
    Ok(())
}

fn run_build_index(cfg: &PipelineConfig) -> Result<()> {
    let mut built = 0;
    for space in Space::ALL {
        let emb = read_embeddings(&artifact(cfg, &aux_file(space), Stage::EmbedAux)?)?;
        let out = cfg.work_dir.join(index_file(space));
        if emb.len() < cfg.index.num_partitions {
            log::warn!(
                "{} space has {} embeddings, fewer than {} partitions; no index built",
                space.name(),
                emb.len(),
                cfg.index.num_partitions
            );
            if out.exists() {
                fs::remove_file(&out).map_err(|e| Error::io(&out, e))?;
            }
            continue;
        }
        Index::build(&emb, cfg.index.clone())?.save(&out)?;
        built += 1;
    }
    if built == 0 {
        return Err(Error::invalid("no space has enough embeddings to build an index"));
    }
    Ok(())
}

fn run_mine_triplets(cfg: &PipelineConfig) -> Result<()> {
    let docs = read_documents(&artifact(cfg, DOCUMENTS, Stage::Ingest)?)?;
    let mut lists = BTreeMap::new();
    for space in Space::ALL {
        let path = cfg.work_dir.join(index_file(space));
        if path.exists() {
            lists.insert(space, neighbor_lists(&Index::load(&path)?, cfg.mining.top_k)?);
        }
    }
    if lists.is_empty() {
        return Err(Error::MissingArtifact {
            path: cfg.work_dir.join(index_file(Space::Entity)),
            hint: "run the `build-index` stage first".into(),
        });
    }
    let labels: Vec<PairLabel> = match optional_input(&cfg.labels, "labels")? {
        Some(p) => read_jsonl(&p)?,
        None => Vec::new(),
    };
    let token_table = match optional_input(&cfg.token_table, "token_table")? {
        Some(p) => Some(VectorTable::load(&p)?),
        None => None,
    };
    let translator = match optional_input(&cfg.dictionary, "dictionary")? {
        Some(p) => Some(DictionaryTranslator::load(&p)?),
        None => None,
    };
    let out = mine_triplets(
        &MiningInputs {
            docs: &docs,
            neighbor_lists: lists,
            token_table: token_table.as_ref(),
            labels: &labels,
            translator: translator.as_ref().map(|t| t as &dyn Translator),
        },
        &cfg.mining,
    )?;
    log::info!("mined {} document triplets", out.report.doc_triplets);
    write_jsonl(&cfg.work_dir.join(TRIPLETS), &out.triplets)?;
    write_jsonl(&cfg.work_dir.join(DOC_TRIPLETS), &out.doc_triplets)?;
    let report = serde_json::to_string_pretty(&out.report).map_err(|e| Error::parse(MINING_REPORT, e))?;
    write_text(&cfg.work_dir.join(MINING_REPORT), &report)
}

fn run_mine_topics(cfg: &PipelineConfig) -> Result<()> {
    let hubs: Vec<HubPage> = read_jsonl(&input(&cfg.hubs, "hubs")?)?;
    let lexicon = TopicLexicon::load(&input(&cfg.lexicon, "lexicon")?)?;
    let doc_topics = mine_hub_topics(&hubs, &lexicon)?;
    let examples = derive_examples(&doc_topics, &hubs, &lexicon);
    let sampled = balance_sample(&examples, cfg.topic_positive_ratio, cfg.seed)?;
    log::info!(
        "{} topic examples, positive ratio {:.3}",
        sampled.len(),
        positive_ratio(&sampled)
    );
    write_jsonl(&cfg.work_dir.join(TOPICS), &sampled)
}

/// Texts the vocabulary is built from: every document and every mined
/// triplet side.
fn vocab_texts(docs: &[Document], triplets: &[AugmentedTriplet]) -> Vec<String> {
    docs.iter()
        .flat_map(|d| [title_body(d), d.anchor_texts.join(" ")])
        .chain(
            triplets
                .iter()
                .flat_map(|t| [t.anchor_text.clone(), t.positive_text.clone(), t.negative_text.clone()]),
        )
        .collect()
}

pub(crate) fn build_vocab(docs: &[Document], triplets: &[AugmentedTriplet]) -> Vocab {
    let texts = vocab_texts(docs, triplets);
    VocabBuilder::default().build(texts.iter().map(String::as_str))
}

/// Tokenizes every document and packs the sequences; returns the ratio.
pub(crate) fn pack_documents(
    docs: &[Document],
    vocab: &Vocab,
    max_len: usize,
    packer: &PackerConfig,
    out: &Path,
) -> Result<f64> {
    let sequences: Vec<Vec<u32>> = docs.iter().map(|d| tokenize(&title_body(d), vocab, max_len)).collect();
    let packer = PackerConfig {
        max_len: packer.max_len.max(max_len),
        ..*packer
    };
    let packed = pack_greedy(&sequences, &packer)?;
    write_packed(out, &packed)?;
    Ok(compression_ratio(sequences.len(), &packed))
}

fn run_pack(cfg: &PipelineConfig) -> Result<()> {
    let docs = read_documents(&artifact(cfg, DOCUMENTS, Stage::Ingest)?)?;
    let triplets: Vec<AugmentedTriplet> = read_jsonl(&artifact(cfg, TRIPLETS, Stage::MineTriplets)?)?;
    let vocab = build_vocab(&docs, &triplets);
    vocab.save(&cfg.work_dir.join(VOCAB))?;
    let ratio = pack_documents(&docs, &vocab, cfg.max_len, &cfg.packer, &cfg.work_dir.join(PACKED))?;
    log::info!("vocabulary of {} pieces, compression ratio {ratio:.2}", vocab.len());
    Ok(())
}

/// Sorted distinct topic ids labeled anywhere in `examples`.
pub fn topic_ids(examples: &[TopicExample]) -> Vec<String> {
    let set: BTreeSet<&String> = examples
        .iter()
        .flat_map(|e| e.labeled_topics().map(|(t, _)| t))
        .collect();
    set.into_iter().cloned().collect()
}

/// Tokenized training data. `keep` selects which mined triplets train.
pub(crate) fn train_data(
    docs: &[Document],
    triplets: &[AugmentedTriplet],
    topics: &[TopicExample],
    topic_index: &BTreeMap<String, usize>,
    vocab: &Vocab,
    max_len: usize,
    keep: impl Fn(&AugmentedTriplet) -> bool,
) -> TrainData {
    let tok = |text: &str| tokenize(text, vocab, max_len);
    let triplets: Vec<TripletExample> = triplets
        .iter()
        .filter(|t| keep(t))
        .map(|t| TripletExample {
            anchor: tok(&t.anchor_text),
            positive: tok(&t.positive_text),
            negative: tok(&t.negative_text),
            positive_translated: t.positive_translated,
            negative_translated: t.negative_translated,
            language: t.language.clone(),
        })
        .collect();
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let topics: Vec<TopicDoc> = topics
        .iter()
        .filter_map(|e| {
            let d = by_id.get(e.doc_id.as_str())?;
            Some(TopicDoc {
                tokens: tok(&title_body(d)),
                labels: e
                    .labeled_topics()
                    .filter_map(|(t, y)| Some((*topic_index.get(t)?, y)))
                    .collect(),
                language: d.language.clone(),
            })
        })
        .collect();
    TrainData::from_examples(triplets, topics)
}

fn run_train(cfg: &PipelineConfig) -> Result<()> {
    let vocab = Vocab::load(&artifact(cfg, VOCAB, Stage::Pack)?)?;
    let docs = read_documents(&artifact(cfg, DOCUMENTS, Stage::Ingest)?)?;
    let triplets: Vec<AugmentedTriplet> = read_jsonl(&artifact(cfg, TRIPLETS, Stage::MineTriplets)?)?;
    let topics_path = cfg.work_dir.join(TOPICS);
    let topics: Vec<TopicExample> = if topics_path.exists() {
        read_jsonl(&topics_path)?
    } else {
        log::warn!("no {TOPICS}; training on triplets only");
        Vec::new()
    };
    let ids = topic_ids(&topics);
    let topic_index: BTreeMap<String, usize> = ids.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    let data = train_data(&docs, &triplets, &topics, &topic_index, &vocab, cfg.max_len, |_| true);
    let enc = EncoderConfig {
        vocab_size: vocab.len(),
        num_topics: ids.len().max(1),
        ..cfg.encoder.clone()
    };
    let mut params = init(&enc)?;
    let metrics_path = cfg.work_dir.join(METRICS);
    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut w = BufWriter::new(file);
    let steps = train(&mut params, &data, &cfg.train, Some(&mut w))?;
    w.flush().map_err(|e| Error::io(&metrics_path, e))?;
    if let Some(last) = steps.last() {
        log::info!("step {} {} loss {:.4}", last.step, last.task, last.loss);
    }
    write_text(&cfg.work_dir.join(TOPIC_IDS), &ids.iter().map(|t| format!("{t}\n")).collect::<String>())?;
    save_checkpoint(&params, &cfg.work_dir.join(CHECKPOINT))
}

/// One text to embed during `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub text: String,
    #[serde(default)]
    pub cluster: Option<String>,
    #[serde(default)]
    pub topic: Option<String>,
}

fn index_labels(labels: &[&String]) -> (Vec<usize>, usize) {
    let distinct: BTreeMap<&String, usize> = labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, l)| (l, i))
        .collect();
    (labels.iter().map(|l| distinct[l]).collect(), distinct.len())
}

fn run_eval(cfg: &PipelineConfig) -> Result<()> {
    let params = load_checkpoint(&artifact(cfg, CHECKPOINT, Stage::Train)?)?;
    let vocab = Vocab::load(&artifact(cfg, VOCAB, Stage::Pack)?)?;
    let mut lines = Vec::new();

    let doc_triplets_path = cfg.work_dir.join(DOC_TRIPLETS);
    let docs_path = cfg.work_dir.join(DOCUMENTS);
    if doc_triplets_path.exists() && docs_path.exists() {
        let docs = read_documents(&docs_path)?;
        let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
        let doc_triplets: Vec<DocTriplet> = read_jsonl(&doc_triplets_path)?;
        let seqs: Vec<Vec<u32>> = doc_triplets
            .iter()
            .flat_map(|t| [&t.anchor_id, &t.positive_id, &t.negative_id])
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|d| tokenize(&title_body(d), &vocab, cfg.max_len))
                    .ok_or_else(|| Error::invalid(format!("triplet references unknown document {id}")))
            })
            .collect::<Result<_>>()?;
        let out = encode_all(&params, &seqs)?;
        let triplets: Vec<_> = out
            .chunks_exact(3)
            .map(|c| (c[0].semantic.clone(), c[1].semantic.clone(), c[2].semantic.clone()))
            .collect();
        lines.push(format!("mined_triplet_accuracy={:.6}", triplet_accuracy(&triplets)));
    }

    if let Some(path) = optional_input(&cfg.eval_data, "eval_data")? {
        let records: Vec<EvalRecord> = read_jsonl(&path)?;
        let seqs: Vec<Vec<u32>> = records.iter().map(|r| tokenize(&r.text, &vocab, cfg.max_len)).collect();
        let out = encode_all(&params, &seqs)?;

        let clustered: Vec<(&Vec<f64>, &String)> = out
            .iter()
            .zip(&records)
            .filter_map(|(o, r)| Some((&o.semantic, r.cluster.as_ref()?)))
            .collect();
        let (labels, k) = index_labels(&clustered.iter().map(|c| c.1).collect::<Vec<_>>());
        if k >= 2 {
            let emb: Vec<Vec<f64>> = clustered.iter().map(|c| c.0.clone()).collect();
            lines.push(format!("cluster_ari={:.6}", kmeans_ari(&emb, &labels, k, cfg.seed, 10)?));
        }

        let topical: Vec<(&Vec<f64>, &String)> = out
            .iter()
            .zip(&records)
            .filter_map(|(o, r)| Some((&o.pooled, r.topic.as_ref()?)))
            .collect();
        let (labels, k) = index_labels(&topical.iter().map(|c| c.1).collect::<Vec<_>>());
        if k >= 2 {
            let rows: Vec<(Vec<f64>, usize)> = topical.iter().zip(labels).map(|(c, l)| (c.0.clone(), l)).collect();
            let (train, test): (Vec<_>, Vec<_>) = rows.into_iter().enumerate().partition(|(i, _)| i % 2 == 0);
            let strip = |v: Vec<(usize, (Vec<f64>, usize))>| v.into_iter().map(|(_, r)| r).collect::<Vec<_>>();
            let acc = linear_probe(&strip(train), &strip(test), &ProbeOptions::default())?;
            lines.push(format!("topic_probe_accuracy={acc:.6}"));
        }
    }
    if lines.is_empty() {
        return Err(Error::MissingArtifact {
            path: doc_triplets_path,
            hint: "run `mine-triplets` or set `eval_data` so there is something to evaluate".into(),
        });
    }
    for l in &lines {
        log::info!("{l}");
    }
    write_text(&cfg.work_dir.join(EVAL_REPORT), &lines.iter().map(|l| format!("{l}\n")).collect::<String>())
}

/// The synthetic experiment with its own tuned model sizes; only the seed
/// and step count come from the pipeline configuration.
pub fn e2e_config(cfg: &PipelineConfig) -> E2eConfig {
    let mut e = E2eConfig::default().with_seed(cfg.seed);
    e.train.steps = cfg.e2e_steps;
    e
}

/// Generates the synthetic corpus and writes it as ordinary input files plus
/// a config pointing at them, so the stages can be run one by one.
pub fn write_synth_inputs(cfg: &PipelineConfig) -> Result<()> {
    fs::create_dir_all(&cfg.work_dir).map_err(|e| Error::io(&cfg.work_dir, e))?;
    let e = e2e_config(cfg);
    let corpus = super::synth::generate(&e.synth)?;
    e2e::export_inputs(&corpus, &e, &cfg.work_dir)
}

fn run_synth_e2e(cfg: &PipelineConfig) -> Result<()> {
    let report = e2e::run(&e2e_config(cfg), &cfg.work_dir)?;
    for (k, v) in report.to_key_values() {
        log::info!("{k}={v}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path) -> PipelineConfig {
        PipelineConfig {
            work_dir: dir.to_path_buf(),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    fn eval_before_train_names_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        match run(Stage::Eval, &config(dir.path())) {
            Err(Error::MissingArtifact { path, hint }) => {
                assert!(path.ends_with(CHECKPOINT));
                assert!(hint.contains("train"));
            }
            other => panic!("expected missing artifact, got {other:?}"),
        }
    }

    #[test]
    fn mining_before_indexing_is_dependency_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = run(Stage::EmbedAux, &config(dir.path())).unwrap_err();
        assert!(matches!(err, Error::MissingArtifact { .. }));
        assert_eq!(err.exit_code(), 2);
    }
}
