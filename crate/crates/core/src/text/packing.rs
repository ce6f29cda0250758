//! Greedy packing of short token sequences into max-length sequences with a
//! bounded cache of partially filled sequences.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PackerConfig {
    pub capacity: usize,
    pub max_len: usize,
    pub min_proportion: f64,
}

impl Default for PackerConfig {
    fn default() -> Self {
        PackerConfig {
            capacity: 100,
            max_len: 512,
            min_proportion: 0.9,
        }
    }
}

impl PackerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.max_len == 0 {
            return Err(Error::Config("packer capacity and max_len must be positive".into()));
        }
        if !(self.min_proportion > 0.0 && self.min_proportion <= 1.0) {
            return Err(Error::Config(format!("min_proportion {} outside (0, 1]", self.min_proportion)));
        }
        Ok(())
    }

    fn threshold(&self) -> f64 {
        self.min_proportion * self.max_len as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmitReason {
    /// Reached `ρ·L`.
    Threshold,
    /// Longest entry pushed out of a full cache.
    Evicted,
    /// Left in the cache at end of input.
    Flushed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedSequence {
    pub token_ids: Vec<u32>,
    /// Start offset of every sub-sequence; always begins with 0.
    pub segment_boundaries: Vec<usize>,
    pub reason: EmitReason,
    /// Filled by [`build_mask_and_positions`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub position_ids: Vec<usize>,
    /// `len × len`, filled by [`build_mask_and_positions`].
    #[serde(skip)]
    pub attention_mask: Vec<Vec<bool>>,
}

impl PackedSequence {
    pub fn single(token_ids: Vec<u32>) -> Self {
        build_mask_and_positions(PackedSequence {
            token_ids,
            segment_boundaries: vec![0],
            reason: EmitReason::Flushed,
            position_ids: Vec::new(),
            attention_mask: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// `(start, end)` of every segment.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.segment_boundaries.len());
        for (k, &s) in self.segment_boundaries.iter().enumerate() {
            let e = self.segment_boundaries.get(k + 1).copied().unwrap_or(self.token_ids.len());
            out.push((s, e));
        }
        out
    }

    /// Segment index of every token.
    pub fn segment_ids(&self) -> Vec<usize> {
        let mut ids = vec![0; self.token_ids.len()];
        for (k, (s, e)) in self.segments().into_iter().enumerate() {
            ids[s..e].fill(k);
        }
        ids
    }
}

struct Entry {
    tokens: Vec<u32>,
    boundaries: Vec<usize>,
}

/// Cache key: length descending, then instance id ascending.
type Key = (std::cmp::Reverse<usize>, usize);

fn emit(entry: Entry, reason: EmitReason) -> PackedSequence {
    PackedSequence {
        token_ids: entry.tokens,
        segment_boundaries: entry.boundaries,
        reason,
        position_ids: Vec::new(),
        attention_mask: Vec::new(),
    }
}

/// Streaming form of the greedy packer. Feed instances with [`Packer::push`]
/// and drain the cache with [`Packer::finish`].
pub struct Packer {
    config: PackerConfig,
    threshold: f64,
    cache: BTreeMap<Key, Entry>,
    next_id: usize,
}

impl Packer {
    pub fn new(config: PackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Packer {
            threshold: config.threshold(),
            config,
            cache: BTreeMap::new(),
            next_id: 0,
        })
    }

    /// Entries currently waiting in the cache.
    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    /// Adds one instance; returns the sequence it completed or evicted, if any.
    pub fn push(&mut self, x: &[u32]) -> Result<Option<PackedSequence>> {
        let i = self.next_id;
        if x.len() > self.config.max_len {
            return Err(Error::invalid(format!(
                "instance {i} has length {} > max_len {}",
                x.len(),
                self.config.max_len
            )));
        }
        self.next_id += 1;
        let max_len = self.config.max_len;
        let fit = self.cache.keys().find(|k| k.0 .0 + x.len() <= max_len).copied();
        match fit {
            Some(key) => {
                let mut y = self.cache.remove(&key).expect("key from iteration");
                y.boundaries.push(y.tokens.len());
                y.tokens.extend_from_slice(x);
                if y.tokens.len() as f64 >= self.threshold {
                    return Ok(Some(emit(y, EmitReason::Threshold)));
                }
                self.cache.insert((std::cmp::Reverse(y.tokens.len()), i), y);
            }
            None => {
                self.cache.insert(
                    (std::cmp::Reverse(x.len()), i),
                    Entry {
                        tokens: x.to_vec(),
                        boundaries: vec![0],
                    },
                );
                if self.cache.len() > self.config.capacity {
                    let (_, longest) = self.cache.pop_first().expect("non-empty cache");
                    return Ok(Some(emit(longest, EmitReason::Evicted)));
                }
            }
        }
        Ok(None)
    }

    /// Emits everything left in the cache, longest first.
    pub fn finish(mut self) -> Vec<PackedSequence> {
        let mut out = Vec::with_capacity(self.cache.len());
        while let Some((_, e)) = self.cache.pop_first() {
            out.push(emit(e, EmitReason::Flushed));
        }
        out
    }
}

/// Packs `instances` in order. Emitted sequences carry segment boundaries but
/// no mask; see [`build_mask_and_positions`].
pub fn pack_greedy(instances: &[Vec<u32>], config: &PackerConfig) -> Result<Vec<PackedSequence>> {
    let mut packer = Packer::new(*config)?;
    if let Some((i, x)) = instances.iter().enumerate().find(|(_, x)| x.len() > config.max_len) {
        return Err(Error::invalid(format!(
            "instance {i} has length {} > max_len {}",
            x.len(),
            config.max_len
        )));
    }
    let mut out = Vec::new();
    for x in instances {
        out.extend(packer.push(x)?);
    }
    out.extend(packer.finish());
    Ok(out)
}

pub fn build_mask_and_positions(mut packed: PackedSequence) -> PackedSequence {
    let n = packed.token_ids.len();
    let seg = packed.segment_ids();
    let mut positions = vec![0; n];
    for (s, e) in packed.segments() {
        for (j, p) in positions[s..e].iter_mut().enumerate() {
            *p = j;
        }
    }
    packed.position_ids = positions;
    packed.attention_mask = (0..n).map(|i| (0..n).map(|j| seg[i] == seg[j]).collect()).collect();
    packed
}

/// Input count over output count.
pub fn compression_ratio(n_inputs: usize, packed: &[PackedSequence]) -> f64 {
    n_inputs as f64 / packed.len().max(1) as f64
}

#[derive(Serialize, Deserialize)]
struct PackedRecord {
    token_ids: Vec<u32>,
    segment_boundaries: Vec<usize>,
    reason: EmitReason,
}

/// One JSON record per line.
pub fn write_packed(path: &Path, packed: &[PackedSequence]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in packed {
        let rec = PackedRecord {
            token_ids: p.token_ids.clone(),
            segment_boundaries: p.segment_boundaries.clone(),
            reason: p.reason,
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_packed(path: &Path) -> Result<Vec<PackedSequence>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PackedRecord = serde_json::from_str(&line)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
        out.push(build_mask_and_positions(PackedSequence {
            token_ids: rec.token_ids,
            segment_boundaries: rec.segment_boundaries,
            reason: rec.reason,
            position_ids: Vec::new(),
            attention_mask: Vec::new(),
        }));
    }
    Ok(out)
}
