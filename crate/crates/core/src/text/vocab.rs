use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const UNK: &str = "[UNK]";

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const UNK_ID: u32 = 3;

pub const SPECIAL_TOKENS: [&str; 4] = [PAD, CLS, SEP, UNK];

/// Continuation prefix of word-internal pieces.
pub const CONTINUATION: &str = "##";

#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary; the special tokens are prepended at ids 0–3 and
    /// duplicates are dropped.
    pub fn new(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for t in SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(tokens) {
            if !v.ids.contains_key(&t) {
                v.ids.insert(t.clone(), v.tokens.len() as u32);
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line; line number is the id.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let tokens = BufReader::new(file)
            .lines()
            .collect::<std::io::Result<Vec<String>>>()
            .map_err(|e| Error::io(path, e))?;
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::parse(
                    path.display().to_string(),
                    format!("line {} must be {s}", i + 1),
                ));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::parse(path.display().to_string(), format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocab { tokens, ids })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in &self.tokens {
            writeln!(w, "{t}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Frequency-based vocabulary: the most frequent whole words, every observed
/// character (word-initial and continuation form), and the most frequent
/// word tails as continuation pieces.
#[derive(Debug, Clone)]
pub struct VocabBuilder {
    pub max_words: usize,
    pub max_suffixes: usize,
    pub max_suffix_len: usize,
}

impl Default for VocabBuilder {
    fn default() -> Self {
        VocabBuilder {
            max_words: 8000,
            max_suffixes: 1000,
            max_suffix_len: 4,
        }
    }
}

fn top_by_count(counts: HashMap<String, usize>, n: usize) -> Vec<String> {
    let mut items: Vec<(String, usize)> = counts.into_iter().collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    items.into_iter().take(n).map(|(t, _)| t).collect()
}

impl VocabBuilder {
    pub fn build<'a>(&self, texts: impl IntoIterator<Item = &'a str>) -> Vocab {
        let mut words: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for w in super::tokenizer::basic_split(text) {
                if !SPECIAL_TOKENS.contains(&w.as_str()) {
                    *words.entry(w).or_default() += 1;
                }
            }
        }
        let mut chars: Vec<char> = words.keys().flat_map(|w| w.chars()).collect();
        chars.sort_unstable();
        chars.dedup();
        let mut suffixes: HashMap<String, usize> = HashMap::new();
        for (w, &c) in &words {
            let cs: Vec<char> = w.chars().collect();
            for len in 2..=self.max_suffix_len.min(cs.len().saturating_sub(1)) {
                let tail: String = cs[cs.len() - len..].iter().collect();
                *suffixes.entry(format!("{CONTINUATION}{tail}")).or_default() += c;
            }
        }
        let mut tokens = top_by_count(words, self.max_words);
        for c in chars {
            tokens.push(c.to_string());
            tokens.push(format!("{CONTINUATION}{c}"));
        }
        tokens.extend(top_by_count(suffixes, self.max_suffixes));
        Vocab::new(tokens)
    }
}
