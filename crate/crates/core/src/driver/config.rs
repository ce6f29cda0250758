//! Layered `key = value` pipeline configuration.
//!
//! Precedence, highest first: `DOCEMBED_<KEY>` environment variables,
//! command-line flags, the config file, built-in defaults. Lines starting
//! with `#` and blank lines are ignored. Unknown keys are errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ann::IndexConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::mining::candidates::DateFilter;
use crate::mining::MiningConfig;
use crate::text::PackerConfig;
use crate::trainer::TrainConfig;

pub const ENV_PREFIX: &str = "DOCEMBED_";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub work_dir: PathBuf,
    /// Raw JSONL documents, input of `ingest`.
    pub corpus: Option<PathBuf>,
    /// Entity id → vector table.
    pub entity_table: Option<PathBuf>,
    /// Token → vector table for text-space embeddings.
    pub token_table: Option<PathBuf>,
    /// Hand-labeled candidate pairs for the negative denoiser.
    pub labels: Option<PathBuf>,
    /// `source<TAB>target` dictionary used to translate non-English triplets.
    pub dictionary: Option<PathBuf>,
    /// JSONL hub pages.
    pub hubs: Option<PathBuf>,
    /// `surface<TAB>topic_id` lexicon.
    pub lexicon: Option<PathBuf>,
    /// JSONL `{text, cluster, topic}` records scored by `eval`.
    pub eval_data: Option<PathBuf>,
    pub seed: u64,
    pub min_words: usize,
    pub index: IndexConfig,
    pub mining: MiningConfig,
    pub topic_positive_ratio: f64,
    pub max_len: usize,
    pub packer: PackerConfig,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    /// Training steps of the synthetic end-to-end run.
    pub e2e_steps: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            work_dir: PathBuf::from("work"),
            corpus: None,
            entity_table: None,
            token_table: None,
            labels: None,
            dictionary: None,
            hubs: None,
            lexicon: None,
            eval_data: None,
            seed: 0,
            min_words: crate::corpus::DEFAULT_MIN_WORDS,
            index: IndexConfig::default(),
            mining: MiningConfig::default(),
            topic_positive_ratio: 0.25,
            max_len: 128,
            packer: PackerConfig::default(),
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            e2e_steps: 2000,
        }
    }
}

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "work_dir",
    "corpus",
    "entity_table",
    "token_table",
    "labels",
    "dictionary",
    "hubs",
    "lexicon",
    "eval_data",
    "seed",
    "min_words",
    "num_partitions",
    "probes",
    "index_iterations",
    "index_spill",
    "top_k",
    "max_positive_days",
    "min_negative_days",
    "denoise_threshold",
    "max_positives_per_anchor",
    "date_buckets",
    "anchor_text_min_sim",
    "topic_positive_ratio",
    "max_len",
    "pack_capacity",
    "pack_max_len",
    "pack_min_proportion",
    "embed_dim",
    "num_blocks",
    "num_heads",
    "hidden_dim",
    "semantic_dim",
    "temperature",
    "batch_size",
    "learning_rate",
    "steps",
    "virtual_shards",
    "cross_shard_negatives",
    "smoothing_alpha",
    "e2e_steps",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("invalid value {value:?} for {key}: {e}")))
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "work_dir" => self.work_dir = PathBuf::from(v),
            "corpus" => self.corpus = path(v),
            "entity_table" => self.entity_table = path(v),
            "token_table" => self.token_table = path(v),
            "labels" => self.labels = path(v),
            "dictionary" => self.dictionary = path(v),
            "hubs" => self.hubs = path(v),
            "lexicon" => self.lexicon = path(v),
            "eval_data" => self.eval_data = path(v),
            "seed" => self.seed = parse(key, v)?,
            "min_words" => self.min_words = parse(key, v)?,
            "num_partitions" => self.index.num_partitions = parse(key, v)?,
            "probes" => self.index.probes = parse(key, v)?,
            "index_iterations" => self.index.iterations = parse(key, v)?,
            "index_spill" => self.index.spill = parse(key, v)?,
            "top_k" => self.mining.top_k = parse(key, v)?,
            "max_positive_days" => self.mining.date_filter.max_pos_days = parse(key, v)?,
            "min_negative_days" => self.mining.date_filter.min_neg_days = parse(key, v)?,
            "denoise_threshold" => self.mining.denoise_threshold = parse(key, v)?,
            "max_positives_per_anchor" => self.mining.max_positives_per_anchor = parse(key, v)?,
            "date_buckets" => self.mining.date_buckets = if v.is_empty() { None } else { Some(parse(key, v)?) },
            "anchor_text_min_sim" => self.mining.anchor_text_min_sim = parse(key, v)?,
            "topic_positive_ratio" => self.topic_positive_ratio = parse(key, v)?,
            "max_len" => self.max_len = parse(key, v)?,
            "pack_capacity" => self.packer.capacity = parse(key, v)?,
            "pack_max_len" => self.packer.max_len = parse(key, v)?,
            "pack_min_proportion" => self.packer.min_proportion = parse(key, v)?,
            "embed_dim" => self.encoder.embed_dim = parse(key, v)?,
            "num_blocks" => self.encoder.num_transformer_blocks = parse(key, v)?,
            "num_heads" => self.encoder.num_heads = parse(key, v)?,
            "hidden_dim" => self.encoder.hidden_dim = parse(key, v)?,
            "semantic_dim" => self.encoder.semantic_dim = parse(key, v)?,
            "temperature" => self.train.temperature = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "learning_rate" => self.train.learning_rate = parse(key, v)?,
            "steps" => self.train.steps = parse(key, v)?,
            "virtual_shards" => self.train.virtual_shards = parse(key, v)?,
            "cross_shard_negatives" => self.train.cross_shard_negatives = parse(key, v)?,
            "smoothing_alpha" => self.train.smoothing_alpha = parse(key, v)?,
            "e2e_steps" => self.e2e_steps = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.mining;
        Some(match key {
            "work_dir" => self.work_dir.display().to_string(),
            "corpus" => show(&self.corpus),
            "entity_table" => show(&self.entity_table),
            "token_table" => show(&self.token_table),
            "labels" => show(&self.labels),
            "dictionary" => show(&self.dictionary),
            "hubs" => show(&self.hubs),
            "lexicon" => show(&self.lexicon),
            "eval_data" => show(&self.eval_data),
            "seed" => self.seed.to_string(),
            "min_words" => self.min_words.to_string(),
            "num_partitions" => self.index.num_partitions.to_string(),
            "probes" => self.index.probes.to_string(),
            "index_iterations" => self.index.iterations.to_string(),
            "index_spill" => self.index.spill.to_string(),
            "top_k" => m.top_k.to_string(),
            "max_positive_days" => m.date_filter.max_pos_days.to_string(),
            "min_negative_days" => m.date_filter.min_neg_days.to_string(),
            "denoise_threshold" => m.denoise_threshold.to_string(),
            "max_positives_per_anchor" => m.max_positives_per_anchor.to_string(),
            "date_buckets" => m.date_buckets.map(|b| b.to_string()).unwrap_or_default(),
            "anchor_text_min_sim" => m.anchor_text_min_sim.to_string(),
            "topic_positive_ratio" => self.topic_positive_ratio.to_string(),
            "max_len" => self.max_len.to_string(),
            "pack_capacity" => self.packer.capacity.to_string(),
            "pack_max_len" => self.packer.max_len.to_string(),
            "pack_min_proportion" => self.packer.min_proportion.to_string(),
            "embed_dim" => self.encoder.embed_dim.to_string(),
            "num_blocks" => self.encoder.num_transformer_blocks.to_string(),
            "num_heads" => self.encoder.num_heads.to_string(),
            "hidden_dim" => self.encoder.hidden_dim.to_string(),
            "semantic_dim" => self.encoder.semantic_dim.to_string(),
            "temperature" => self.train.temperature.to_string(),
            "batch_size" => self.train.batch_size.to_string(),
            "learning_rate" => self.train.learning_rate.to_string(),
            "steps" => self.train.steps.to_string(),
            "virtual_shards" => self.train.virtual_shards.to_string(),
            "cross_shard_negatives" => self.train.cross_shard_negatives.to_string(),
            "smoothing_alpha" => self.train.smoothing_alpha.to_string(),
            "e2e_steps" => self.e2e_steps.to_string(),
            _ => return None,
        })
    }

    /// The resolved configuration as a loadable file.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).unwrap_or_default()))
            .collect()
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("{origin}:{}", i + 1), "expected key = value"))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::parse(format!("{origin}:{}", i + 1), e.to_string()))?;
        }
        Ok(())
    }

    /// Builds the configuration from all layers. `flags` are `(key, value)`
    /// pairs from the command line; `env` is usually `std::env::vars()`.
    pub fn resolve(
        file: Option<&Path>,
        flags: &[(String, String)],
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        if let Some(file) = file {
            let text = fs::read_to_string(file).map_err(|e| Error::io(file, e))?;
            cfg.apply_text(&text, &file.display().to_string())?;
        }
        for (k, v) in flags {
            cfg.set(k, v)?;
        }
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| Some((k.strip_prefix(ENV_PREFIX)?.to_lowercase(), v)))
            .collect();
        env.sort();
        for (k, v) in env {
            cfg.set(&k, &v)
                .map_err(|e| Error::Config(format!("{ENV_PREFIX}{}: {e}", k.to_uppercase())))?;
        }
        cfg.sync_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    fn sync_seeds(&mut self) {
        self.index.seed = self.seed;
        self.encoder.seed = self.seed;
        self.train.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.index.validate()?;
        self.packer.validate()?;
        self.train.validate()?;
        if self.max_len < 3 {
            return Err(Error::Config("max_len must leave room for [CLS] and [SEP]".into()));
        }
        if !(0.0..1.0).contains(&self.topic_positive_ratio) || self.topic_positive_ratio == 0.0 {
            return Err(Error::Config("topic_positive_ratio must be in (0, 1)".into()));
        }
        let DateFilter { max_pos_days, min_neg_days } = self.mining.date_filter;
        if max_pos_days >= min_neg_days {
            return Err(Error::Config("max_positive_days must be below min_negative_days".into()));
        }
        Ok(())
    }
}
