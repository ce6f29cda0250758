//! Triplet mining: neighbor union across auxiliary spaces, byline-date
//! labeling, learned denoising of negatives, and text augmentation.

pub mod augment;
pub mod candidates;
pub mod date_model;
pub mod denoiser;

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::aux_embed::{Space, VectorTable};
use crate::corpus::Document;
use crate::error::{Error, Result};

pub use augment::{augment, translate_augment, AugType, AugmentedTriplet, Translator};
pub use candidates::{date_filter, generate_candidates, CandidatePair, DateFilter, DateLabel, NeighborLists};
pub use date_model::{train_date_predictor, DatePredictor};
pub use denoiser::{apply_denoiser, train_denoiser, DenoiserModel, LabeledPair, PairFeatures};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiningConfig {
    pub top_k: usize,
    pub date_filter: DateFilter,
    pub denoise_threshold: f64,
    pub max_positives_per_anchor: usize,
    /// `None` picks roughly monthly buckets.
    pub date_buckets: Option<usize>,
    pub anchor_text_min_sim: f64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            top_k: 20,
            date_filter: DateFilter::default(),
            denoise_threshold: 0.5,
            max_positives_per_anchor: 3,
            date_buckets: None,
            anchor_text_min_sim: augment::ANCHOR_TEXT_MIN_SIM,
        }
    }
}

/// A hand label for one candidate pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLabel {
    pub anchor_id: String,
    pub neighbor_id: String,
    pub is_true_negative: bool,
}

/// Document-level triplet before augmentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocTriplet {
    pub anchor_id: String,
    pub positive_id: String,
    pub negative_id: String,
    pub positive_delta_days: u64,
    pub negative_delta_days: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub candidates: usize,
    pub positives: usize,
    pub negatives: usize,
    pub discarded: usize,
    pub negatives_after_denoise: usize,
    pub doc_triplets: usize,
    pub augmented_triplets: usize,
    pub translated_triplets: usize,
    pub denoiser_training_accuracy: Option<f64>,
}

pub struct MiningInputs<'a> {
    pub docs: &'a [Document],
    pub neighbor_lists: BTreeMap<Space, NeighborLists>,
    pub token_table: Option<&'a VectorTable>,
    pub labels: &'a [PairLabel],
    pub translator: Option<&'a dyn Translator>,
}

#[derive(Debug, Clone)]
pub struct MiningOutput {
    pub triplets: Vec<AugmentedTriplet>,
    pub doc_triplets: Vec<DocTriplet>,
    pub labeled_pairs: Vec<LabeledPair>,
    pub date_predictor: DatePredictor,
    pub denoiser: Option<DenoiserModel>,
    pub report: MiningReport,
}

pub fn mine_triplets(inputs: &MiningInputs<'_>, config: &MiningConfig) -> Result<MiningOutput> {
    let docs = inputs.docs;
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut report = MiningReport::default();

    let candidates = generate_candidates(docs, &inputs.neighbor_lists);
    report.candidates = candidates.len();

    let buckets = config.date_buckets.unwrap_or_else(|| date_model::monthly_buckets(docs));
    let dates = train_date_predictor(docs, buckets)?;

    let labeled: Vec<LabeledPair> = candidates
        .into_iter()
        .map(|pair| {
            let label = config.date_filter.classify(&pair);
            let features = denoiser::pair_features(&pair, by_id[pair.anchor_id.as_str()], by_id[pair.neighbor_id.as_str()], &dates);
            LabeledPair { pair, label, features }
        })
        .collect();
    for p in &labeled {
        match p.label {
            DateLabel::Positive => report.positives += 1,
            DateLabel::Negative => report.negatives += 1,
            DateLabel::Discard => report.discarded += 1,
        }
    }

    let model = if inputs.labels.is_empty() {
        log::warn!("no labeled pairs supplied; negatives are not denoised");
        None
    } else {
        let lookup: HashMap<(&str, &str), &LabeledPair> = labeled
            .iter()
            .map(|p| ((p.pair.anchor_id.as_str(), p.pair.neighbor_id.as_str()), p))
            .collect();
        let mut training = Vec::new();
        for l in inputs.labels {
            match lookup.get(&(l.anchor_id.as_str(), l.neighbor_id.as_str())) {
                Some(p) => training.push((p.features, l.is_true_negative)),
                None => log::debug!("label for non-candidate pair {} {} ignored", l.anchor_id, l.neighbor_id),
            }
        }
        let m = train_denoiser(&training)?;
        report.denoiser_training_accuracy = Some(m.accuracy(&training));
        Some(m)
    };

    let kept: Vec<LabeledPair> = match &model {
        Some(m) => apply_denoiser(m, &labeled, config.denoise_threshold),
        None => labeled.iter().filter(|p| p.label != DateLabel::Discard).cloned().collect(),
    };
    report.negatives_after_denoise = kept.iter().filter(|p| p.label == DateLabel::Negative).count();

    let doc_triplets = assemble(&kept, config.max_positives_per_anchor);
    report.doc_triplets = doc_triplets.len();

    let similarity_check;
    let check: &dyn augment::AnchorTextCheck = match inputs.token_table {
        Some(table) => {
            similarity_check = augment::TitleSimilarityCheck {
                token_table: table,
                min_sim: config.anchor_text_min_sim,
            };
            &similarity_check
        }
        None => &augment::RejectAll,
    };
    let mut triplets = Vec::new();
    for t in &doc_triplets {
        let (a, p, n) = (by_id[t.anchor_id.as_str()], by_id[t.positive_id.as_str()], by_id[t.negative_id.as_str()]);
        let entirely_foreign = !a.is_english() && !p.is_english() && !n.is_english();
        for row in augment(a, p, n, check) {
            if entirely_foreign {
                if let Some(tr) = inputs.translator {
                    let translated = translate_augment(&row, tr);
                    if translated.positive_translated {
                        report.translated_triplets += 1;
                        triplets.push(row);
                        triplets.push(translated);
                        continue;
                    }
                }
            }
            triplets.push(row);
        }
    }
    report.augmented_triplets = triplets.len();

    Ok(MiningOutput {
        triplets,
        doc_triplets,
        labeled_pairs: labeled,
        date_predictor: dates,
        denoiser: model,
        report,
    })
}

/// Pairs each anchor's positives (best `max_positives` by max similarity)
/// with its negatives, hardest first, cycling when negatives run short.
/// Anchors lacking either side are dropped.
pub fn assemble(kept: &[LabeledPair], max_positives: usize) -> Vec<DocTriplet> {
    let mut per_anchor: BTreeMap<&str, (Vec<&LabeledPair>, Vec<&LabeledPair>)> = BTreeMap::new();
    for p in kept {
        let entry = per_anchor.entry(p.pair.anchor_id.as_str()).or_default();
        match p.label {
            DateLabel::Positive => entry.0.push(p),
            DateLabel::Negative => entry.1.push(p),
            DateLabel::Discard => {}
        }
    }
    let by_sim = |a: &&LabeledPair, b: &&LabeledPair| {
        b.pair
            .max_sim()
            .partial_cmp(&a.pair.max_sim())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.pair.neighbor_id.cmp(&b.pair.neighbor_id))
    };
    let mut out = Vec::new();
    for (anchor, (mut pos, mut neg)) in per_anchor {
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        pos.sort_by(by_sim);
        neg.sort_by(by_sim);
        for (i, p) in pos.iter().take(max_positives).enumerate() {
            let n = neg[i % neg.len()];
            out.push(DocTriplet {
                anchor_id: anchor.to_string(),
                positive_id: p.pair.neighbor_id.clone(),
                negative_id: n.pair.neighbor_id.clone(),
                positive_delta_days: p.pair.date_delta_days,
                negative_delta_days: n.pair.date_delta_days,
            });
        }
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::parse(path.display().to_string(), e))?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e))?);
    }
    Ok(out)
}
