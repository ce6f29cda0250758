//! Seeded synthetic news corpus with known story, topic and date structure.
//!
//! Stories come in families: two occurrences of the same recurring event,
//! more than a year apart, share entities and topic but not event words.
//! Evergreen articles repeat a subject across the whole date range. Every
//! document also carries publisher boilerplate and generic filler, so the
//! surface form is dominated by words unrelated to the story.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::aux_embed::VectorTable;
use crate::corpus::{Day, Document, ImageHash};
use crate::error::Result;
use crate::mining::augment::DictionaryTranslator;
use crate::mining::PairLabel;
use crate::topics::{HubPage, TopicLexicon};
use crate::util::{rng, Rng};

pub const TOPIC_NAMES: [&str; 8] = ["Sports", "Finance", "Science", "Travel", "Health", "Politics", "Culture", "Weather"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub families: usize,
    pub occurrences: usize,
    pub docs_per_story: usize,
    pub evergreen_subjects: usize,
    pub docs_per_subject: usize,
    pub topics: usize,
    pub publishers: usize,
    pub topics_per_publisher: usize,
    /// Second language besides English.
    pub foreign_language: String,
    pub filler_vocab: usize,
    pub words_per_story: usize,
    pub synonyms_per_topic: usize,
    pub style_words_per_publisher: usize,
    pub span_days: i64,
    pub start_day: Day,
    pub eval_docs_per_story: usize,
    pub eval_docs_per_subject: usize,
    /// Share of plausible negative pairs that receive a hand label.
    pub label_fraction: f64,
    pub hub_recall: f64,
    pub token_dim: usize,
    pub entity_dim: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            families: 10,
            occurrences: 2,
            docs_per_story: 8,
            evergreen_subjects: 10,
            docs_per_subject: 4,
            topics: 6,
            publishers: 4,
            topics_per_publisher: 4,
            foreign_language: "xx".into(),
            filler_vocab: 400,
            words_per_story: 12,
            synonyms_per_topic: 12,
            style_words_per_publisher: 12,
            span_days: 1095,
            start_day: 17897, // 2019-01-01
            eval_docs_per_story: 8,
            eval_docs_per_subject: 2,
            label_fraction: 0.5,
            hub_recall: 0.9,
            token_dim: 16,
            entity_dim: 16,
        }
    }
}

impl SynthConfig {
    pub fn num_stories(&self) -> usize {
        self.families * self.occurrences
    }
}

/// Ground truth of one generated document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    Story { family: usize, story: usize },
    Evergreen { subject: usize },
}

/// A held-out document for evaluation; never part of the training corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDoc {
    pub id: String,
    pub title: String,
    pub body: String,
    pub language: String,
    pub origin: Origin,
    pub topic: usize,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub config: SynthConfig,
    pub docs: Vec<Document>,
    pub origin: BTreeMap<String, Origin>,
    pub topic_of: BTreeMap<String, usize>,
    pub topic_names: Vec<String>,
    pub hubs: Vec<HubPage>,
    pub lexicon: TopicLexicon,
    pub lexicon_entries: Vec<(String, String)>,
    pub entity_table: VectorTable,
    pub token_table: VectorTable,
    pub translator: DictionaryTranslator,
    pub labels: Vec<PairLabel>,
    pub eval_docs: Vec<EvalDoc>,
}

/// One concept rendered in both languages.
#[derive(Debug, Clone)]
struct Word {
    en: String,
    foreign: String,
}

impl Word {
    fn form(&self, english: bool) -> &str {
        if english {
            &self.en
        } else {
            &self.foreign
        }
    }
}

struct WordMaker {
    used: HashSet<String>,
}

const EN_ONSETS: [&str; 14] = ["b", "d", "f", "g", "h", "l", "m", "n", "p", "r", "s", "t", "v", "w"];
const EN_VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const FX_ONSETS: [&str; 10] = ["k", "z", "j", "q", "x", "kr", "zv", "dj", "sk", "ts"];
const FX_VOWELS: [&str; 6] = ["y", "oo", "ae", "ui", "ei", "ou"];

impl WordMaker {
    fn make(&mut self, r: &mut Rng, onsets: &[&str], vowels: &[&str]) -> String {
        loop {
            let syllables = r.random_range(2..=3);
            let w: String = (0..syllables)
                .map(|_| format!("{}{}", onsets.choose(r).unwrap(), vowels.choose(r).unwrap()))
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn word(&mut self, r: &mut Rng) -> Word {
        Word {
            en: self.make(r, &EN_ONSETS, &EN_VOWELS),
            foreign: self.make(r, &FX_ONSETS, &FX_VOWELS),
        }
    }

    fn words(&mut self, r: &mut Rng, n: usize) -> Vec<Word> {
        (0..n).map(|_| self.word(r)).collect()
    }
}

struct Lexicon {
    filler: Vec<Word>,
    topic: Vec<Vec<Word>>,
    story: Vec<Vec<Word>>,
    subject: Vec<Vec<Word>>,
    style: Vec<Vec<Word>>,
    /// Family and subject names; identical in both languages.
    family_names: Vec<Vec<String>>,
    subject_names: Vec<Vec<String>>,
}

fn pick<'a, T>(r: &mut Rng, items: &'a [T], n: usize) -> Vec<&'a T> {
    items.choose_multiple(r, n.min(items.len())).collect()
}

struct Plan {
    story_topic: Vec<usize>,
    story_day: Vec<Day>,
    story_image: Vec<Vec<u8>>,
    subject_topic: Vec<usize>,
    subject_image: Vec<Vec<u8>>,
    publisher_topics: Vec<BTreeSet<usize>>,
}

fn story_days(c: &SynthConfig, r: &mut Rng) -> Result<Vec<Day>> {
    // Occurrences of a family are at least 365 + 30 days apart; any two
    // stories at least 5 days apart.
    let gap = 395;
    let span = c.span_days - 2;
    for _ in 0..10_000 {
        let mut days = Vec::with_capacity(c.num_stories());
        let mut ok = true;
        for _ in 0..c.families {
            let latest_first = span - gap * (c.occurrences as i64 - 1);
            if latest_first < 0 {
                ok = false;
                break;
            }
            let mut d = r.random_range(0..=latest_first);
            days.push(d);
            for k in 1..c.occurrences {
                let remaining = (c.occurrences - k) as i64;
                let max_extra = (span - d - gap * remaining).clamp(0, 200);
                d += gap + r.random_range(0..=max_extra);
                days.push(d);
            }
        }
        if ok
            && days.iter().all(|&d| d <= span)
            && days
                .iter()
                .enumerate()
                .all(|(i, a)| days.iter().skip(i + 1).all(|b| (a - b).abs() >= 5))
        {
            return Ok(days.into_iter().map(|d| d + c.start_day).collect());
        }
    }
    Err(crate::Error::Config("cannot place story dates in the configured span".into()))
}

fn random_hash(r: &mut Rng) -> Vec<u8> {
    (0..8).map(|_| r.random()).collect()
}

fn perturb(hash: &[u8], flips: usize, r: &mut Rng) -> ImageHash {
    let mut h = hash.to_vec();
    for _ in 0..flips {
        let bit = r.random_range(0..h.len() * 8);
        h[bit / 8] ^= 0x80 >> (bit % 8);
    }
    ImageHash::from_hex(&hex::encode(h)).expect("valid hex")
}

struct Text {
    title: String,
    body: String,
}

fn compose(parts: Vec<Vec<String>>, r: &mut Rng) -> String {
    let mut words: Vec<String> = parts.into_iter().flatten().collect();
    words.shuffle(r);
    words.join(" ")
}

fn forms(words: Vec<&Word>, english: bool) -> Vec<String> {
    words.into_iter().map(|w| w.form(english).to_string()).collect()
}

fn sample_forms(r: &mut Rng, words: &[Word], n: usize, english: bool) -> Vec<String> {
    forms(pick(r, words, n), english)
}

fn with_replacement(r: &mut Rng, words: &[Word], n: usize, english: bool) -> Vec<String> {
    (0..n).map(|_| words.choose(r).unwrap().form(english).to_string()).collect()
}

fn story_text(lex: &Lexicon, story: usize, family: usize, topic: usize, publisher: usize, english: bool, r: &mut Rng) -> Text {
    let names = &lex.family_names[family];
    let title = compose(
        vec![
            sample_forms(r, &lex.story[story], 2, english),
            pick(r, names, 1).into_iter().cloned().collect(),
            sample_forms(r, &lex.topic[topic], 1, english),
            with_replacement(r, &lex.filler, 2, english),
        ],
        r,
    );
    let body = compose(
        vec![
            sample_forms(r, &lex.story[story], 6, english),
            pick(r, names, 2).into_iter().cloned().collect(),
            sample_forms(r, &lex.topic[topic], 3, english),
            with_replacement(r, &lex.filler, 22, english),
            sample_forms(r, &lex.style[publisher], 5, english),
        ],
        r,
    );
    Text { title, body }
}

fn evergreen_text(lex: &Lexicon, subject: usize, topic: usize, publisher: usize, english: bool, r: &mut Rng) -> Text {
    let names = &lex.subject_names[subject];
    let title = compose(
        vec![
            sample_forms(r, &lex.subject[subject], 2, english),
            sample_forms(r, &lex.topic[topic], 1, english),
            with_replacement(r, &lex.filler, 3, english),
        ],
        r,
    );
    let body = compose(
        vec![
            sample_forms(r, &lex.subject[subject], 6, english),
            pick(r, names, 1).into_iter().cloned().collect(),
            sample_forms(r, &lex.topic[topic], 3, english),
            with_replacement(r, &lex.filler, 23, english),
            sample_forms(r, &lex.style[publisher], 5, english),
        ],
        r,
    );
    Text { title, body }
}

fn unit_vector(r: &mut Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(r)).collect();
    crate::util::normalized(&v).unwrap_or_else(|| {
        let mut e = vec![0.0; dim];
        e[0] = 1.0;
        e
    })
}

fn jitter(r: &mut Rng, base: &[f64], scale: f64) -> Vec<f64> {
    base.iter()
        .map(|b| {
            let z: f64 = StandardNormal.sample(r);
            b + scale * z
        })
        .collect()
}

pub fn generate(c: &SynthConfig) -> Result<SynthCorpus> {
    if c.topics > TOPIC_NAMES.len() || c.topics == 0 {
        return Err(crate::Error::Config(format!("topics must be in 1..={}", TOPIC_NAMES.len())));
    }
    if c.publishers == 0 || c.topics_per_publisher == 0 || c.topics_per_publisher > c.topics {
        return Err(crate::Error::Config("invalid publisher topic coverage".into()));
    }
    let mut r = rng(c.seed, 0x5e_0001);
    let mut maker = WordMaker { used: HashSet::new() };
    let n_stories = c.num_stories();
    let lex = Lexicon {
        filler: maker.words(&mut r, c.filler_vocab),
        topic: (0..c.topics).map(|_| maker.words(&mut r, c.synonyms_per_topic)).collect(),
        story: (0..n_stories).map(|_| maker.words(&mut r, c.words_per_story)).collect(),
        subject: (0..c.evergreen_subjects).map(|_| maker.words(&mut r, c.words_per_story)).collect(),
        style: (0..c.publishers).map(|_| maker.words(&mut r, c.style_words_per_publisher)).collect(),
        family_names: (0..c.families)
            .map(|_| (0..3).map(|_| maker.make(&mut r, &EN_ONSETS, &EN_VOWELS)).collect())
            .collect(),
        subject_names: (0..c.evergreen_subjects)
            .map(|_| (0..2).map(|_| maker.make(&mut r, &EN_ONSETS, &EN_VOWELS)).collect())
            .collect(),
    };

    let family_topic: Vec<usize> = (0..c.families).map(|f| f % c.topics).collect();
    let plan = Plan {
        story_topic: (0..n_stories).map(|s| family_topic[s / c.occurrences]).collect(),
        story_day: story_days(c, &mut r)?,
        story_image: (0..n_stories).map(|_| random_hash(&mut r)).collect(),
        subject_topic: (0..c.evergreen_subjects).map(|s| (s + 3) % c.topics).collect(),
        subject_image: (0..c.evergreen_subjects).map(|_| random_hash(&mut r)).collect(),
        publisher_topics: (0..c.publishers)
            .map(|p| (0..c.topics_per_publisher).map(|k| (p + k) % c.topics).collect())
            .collect(),
    };
    let publishers_for = |topic: usize| -> Vec<usize> {
        (0..c.publishers).filter(|p| plan.publisher_topics[*p].contains(&topic)).collect()
    };
    let publisher_name = |p: usize| format!("publisher{p}");

    let mut docs = Vec::new();
    let mut origin = BTreeMap::new();
    let mut topic_of = BTreeMap::new();
    let mut publisher_of = HashMap::new();
    let mut make_doc = |id: String,
                        text: Text,
                        english: bool,
                        day: Day,
                        publisher: usize,
                        entities: Vec<String>,
                        image: ImageHash,
                        anchor: Option<String>,
                        o: Origin,
                        topic: usize| {
        origin.insert(id.clone(), o);
        topic_of.insert(id.clone(), topic);
        publisher_of.insert(id.clone(), publisher);
        docs.push(Document {
            id,
            title: text.title,
            body: text.body,
            anchor_texts: anchor.into_iter().collect(),
            byline_date: day,
            publisher: publisher_name(publisher),
            language: if english { "en".into() } else { c.foreign_language.clone() },
            entity_ids: entities,
            image_hash: Some(image),
        });
    };

    for s in 0..n_stories {
        let family = s / c.occurrences;
        let topic = plan.story_topic[s];
        let pubs = publishers_for(topic);
        for k in 0..c.docs_per_story {
            let english = k % 2 == 0;
            let publisher = *pubs.choose(&mut r).unwrap();
            let text = story_text(&lex, s, family, topic, publisher, english, &mut r);
            let mut entities: Vec<String> = pick(&mut r, &[0, 1, 2], 2).into_iter().map(|e| format!("F{family}E{e}")).collect();
            if r.random::<f64>() < 0.3 {
                entities.push(format!("G{}", r.random_range(0..20)));
            }
            let anchor = (r.random::<f64>() < 0.5).then(|| {
                compose(
                    vec![
                        sample_forms(&mut r, &lex.story[s], 2, english),
                        pick(&mut r, &lex.family_names[family], 1).into_iter().cloned().collect(),
                    ],
                    &mut r,
                )
            });
            make_doc(
                format!("s{s:02}d{k:02}"),
                text,
                english,
                plan.story_day[s] + r.random_range(0..=1),
                publisher,
                entities,
                perturb(&plan.story_image[s], 4, &mut r),
                anchor,
                Origin::Story { family, story: s },
                topic,
            );
        }
    }
    for subject in 0..c.evergreen_subjects {
        let topic = plan.subject_topic[subject];
        let pubs = publishers_for(topic);
        for k in 0..c.docs_per_subject {
            let english = k % 2 == 0;
            let publisher = *pubs.choose(&mut r).unwrap();
            let text = evergreen_text(&lex, subject, topic, publisher, english, &mut r);
            make_doc(
                format!("e{subject:02}d{k:02}"),
                text,
                english,
                c.start_day + r.random_range(0..c.span_days),
                publisher,
                vec![format!("S{subject}E0"), format!("S{subject}E1")],
                perturb(&plan.subject_image[subject], 6, &mut r),
                None,
                Origin::Evergreen { subject },
                topic,
            );
        }
    }
    docs.sort_by(|a, b| a.id.cmp(&b.id));

    // Hubs: one per (publisher, covered topic), plus author pages that the
    // lexicon does not match.
    let mut hubs = Vec::new();
    for p in 0..c.publishers {
        for &t in &plan.publisher_topics[p] {
            let members: Vec<String> = docs
                .iter()
                .filter(|d| publisher_of[&d.id] == p && topic_of[&d.id] == t)
                .filter(|_| r.random::<f64>() < c.hub_recall)
                .map(|d| d.id.clone())
                .collect();
            let title = if p % 2 == 0 { TOPIC_NAMES[t].to_string() } else { TOPIC_NAMES[t].to_uppercase() };
            hubs.push(HubPage {
                publisher: publisher_name(p),
                title,
                member_doc_ids: members,
            });
        }
        let author: Vec<String> = docs
            .iter()
            .filter(|d| publisher_of[&d.id] == p)
            .filter(|_| r.random::<f64>() < 0.2)
            .map(|d| d.id.clone())
            .collect();
        hubs.push(HubPage {
            publisher: publisher_name(p),
            title: format!("Columns by {}", maker.make(&mut r, &EN_ONSETS, &EN_VOWELS)),
            member_doc_ids: author,
        });
    }
    let lexicon_entries: Vec<(String, String)> = (0..c.topics)
        .map(|t| (TOPIC_NAMES[t].to_string(), TOPIC_NAMES[t].to_lowercase()))
        .collect();
    let lexicon = TopicLexicon::new(lexicon_entries.clone());
    let topic_names: Vec<String> = lexicon.topics();

    // Cross-lingual token table: both forms of a concept share a base vector.
    let mut token_rows = HashMap::new();
    let mut dictionary = HashMap::new();
    let all_words = lex
        .filler
        .iter()
        .chain(lex.topic.iter().flatten())
        .chain(lex.story.iter().flatten())
        .chain(lex.subject.iter().flatten())
        .chain(lex.style.iter().flatten());
    for w in all_words {
        let base = unit_vector(&mut r, c.token_dim);
        token_rows.insert(w.en.clone(), jitter(&mut r, &base, 0.1));
        token_rows.insert(w.foreign.clone(), jitter(&mut r, &base, 0.1));
        dictionary.insert(w.foreign.clone(), w.en.clone());
    }
    for name in lex.family_names.iter().chain(&lex.subject_names).flatten() {
        token_rows.insert(name.clone(), unit_vector(&mut r, c.token_dim));
    }
    let token_table = VectorTable::new(token_rows)?;

    let mut entity_rows = HashMap::new();
    for f in 0..c.families {
        let base = unit_vector(&mut r, c.entity_dim);
        for e in 0..3 {
            entity_rows.insert(format!("F{f}E{e}"), jitter(&mut r, &base, 0.3));
        }
    }
    for s in 0..c.evergreen_subjects {
        let base = unit_vector(&mut r, c.entity_dim);
        for e in 0..2 {
            entity_rows.insert(format!("S{s}E{e}"), jitter(&mut r, &base, 0.3));
        }
    }
    for g in 0..20 {
        entity_rows.insert(format!("G{g}"), unit_vector(&mut r, c.entity_dim));
    }
    let entity_table = VectorTable::new(entity_rows)?;

    // Hand labels on plausible negatives: pairs more than a year apart that
    // share a family, subject or topic.
    let mut labels = Vec::new();
    let related = |a: &Origin, b: &Origin| match (a, b) {
        (Origin::Story { family: f, .. }, Origin::Story { family: g, .. }) => f == g,
        (Origin::Evergreen { subject: s }, Origin::Evergreen { subject: t }) => s == t,
        _ => false,
    };
    for a in &docs {
        for b in &docs {
            if a.id == b.id || (a.byline_date - b.byline_date).abs() < 365 {
                continue;
            }
            let (oa, ob) = (&origin[&a.id], &origin[&b.id]);
            if !(related(oa, ob) || topic_of[&a.id] == topic_of[&b.id]) {
                continue;
            }
            if r.random::<f64>() >= c.label_fraction {
                continue;
            }
            let same_subject = matches!((oa, ob), (Origin::Evergreen { subject: s }, Origin::Evergreen { subject: t }) if s == t);
            labels.push(PairLabel {
                anchor_id: a.id.clone(),
                neighbor_id: b.id.clone(),
                is_true_negative: !same_subject && oa != ob,
            });
        }
    }

    let mut er = rng(c.seed, 0x5e_0002);
    let mut eval_docs = Vec::new();
    for s in 0..n_stories {
        let family = s / c.occurrences;
        let topic = plan.story_topic[s];
        let pubs = publishers_for(topic);
        for k in 0..c.eval_docs_per_story {
            let english = k % 2 == 0;
            let publisher = *pubs.choose(&mut er).unwrap();
            let t = story_text(&lex, s, family, topic, publisher, english, &mut er);
            eval_docs.push(EvalDoc {
                id: format!("eval-s{s:02}d{k:02}"),
                title: t.title,
                body: t.body,
                language: if english { "en".into() } else { c.foreign_language.clone() },
                origin: Origin::Story { family, story: s },
                topic,
            });
        }
    }
    for subject in 0..c.evergreen_subjects {
        let topic = plan.subject_topic[subject];
        let pubs = publishers_for(topic);
        for k in 0..c.eval_docs_per_subject {
            let english = k % 2 == 0;
            let publisher = *pubs.choose(&mut er).unwrap();
            let t = evergreen_text(&lex, subject, topic, publisher, english, &mut er);
            eval_docs.push(EvalDoc {
                id: format!("eval-e{subject:02}d{k:02}"),
                title: t.title,
                body: t.body,
                language: if english { "en".into() } else { c.foreign_language.clone() },
                origin: Origin::Evergreen { subject },
                topic,
            });
        }
    }

    Ok(SynthCorpus {
        config: c.clone(),
        docs,
        origin,
        topic_of,
        topic_names,
        hubs,
        lexicon,
        lexicon_entries,
        entity_table,
        token_table,
        translator: DictionaryTranslator { entries: dictionary },
        labels,
        eval_docs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_matches_config() {
        let c = SynthConfig::default();
        let s = generate(&c).unwrap();
        assert_eq!(s.docs.len(), 200);
        let langs: BTreeSet<&str> = s.docs.iter().map(|d| d.language.as_str()).collect();
        assert_eq!(langs.len(), 2);
        let pubs: BTreeSet<&str> = s.docs.iter().map(|d| d.publisher.as_str()).collect();
        assert_eq!(pubs.len(), 4);
        assert_eq!(s.topic_names.len(), 6);
        assert!(!s.labels.is_empty());
    }

    #[test]
    fn story_dates_within_a_day_and_families_over_a_year_apart() {
        let s = generate(&SynthConfig::default()).unwrap();
        let mut by_story: BTreeMap<usize, Vec<Day>> = BTreeMap::new();
        for d in &s.docs {
            if let Origin::Story { story, .. } = s.origin[&d.id] {
                by_story.entry(story).or_default().push(d.byline_date);
            }
        }
        for days in by_story.values() {
            let (lo, hi) = (days.iter().min().unwrap(), days.iter().max().unwrap());
            assert!(hi - lo <= 1);
        }
        for f in 0..10 {
            let a = by_story[&(2 * f)][0];
            let b = by_story[&(2 * f + 1)][0];
            assert!((a - b).abs() >= 365);
        }
        let all: Vec<Day> = s.docs.iter().map(|d| d.byline_date).collect();
        assert!(all.iter().max().unwrap() - all.iter().min().unwrap() < 1095);
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&SynthConfig::default()).unwrap();
        let b = generate(&SynthConfig::default()).unwrap();
        assert_eq!(a.docs, b.docs);
        assert_eq!(a.labels, b.labels);
    }
}
