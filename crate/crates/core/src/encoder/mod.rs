//! Small transformer text encoder with a semantic head and a topic head.
//!
//! All weights live in one flat vector; [`Layout`] names the slices. The
//! three triplet towers call the same [`EncoderParams`].

mod model;
pub mod ops;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::rng;

pub use model::{backward, forward, forward_with_cache, EncoderInput, EncoderOutput, ForwardCache};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub num_transformer_blocks: usize,
    pub num_heads: usize,
    pub hidden_dim: usize,
    pub semantic_dim: usize,
    pub num_topics: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 8192,
            embed_dim: 64,
            num_transformer_blocks: 1,
            num_heads: 4,
            hidden_dim: 128,
            semantic_dim: 32,
            num_topics: 1,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("semantic_dim", self.semantic_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.num_transformer_blocks > 2 {
            return Err(Error::Config("num_transformer_blocks must be 0, 1 or 2".into()));
        }
        if self.num_transformer_blocks > 0 {
            if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
                return Err(Error::Config(format!(
                    "embed_dim {} not divisible by num_heads {}",
                    self.embed_dim, self.num_heads
                )));
            }
            if self.hidden_dim == 0 {
                return Err(Error::Config("hidden_dim must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads.max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub ln1_g: Range<usize>,
    pub ln1_b: Range<usize>,
    pub wq: Range<usize>,
    pub bq: Range<usize>,
    pub wk: Range<usize>,
    pub bk: Range<usize>,
    pub wv: Range<usize>,
    pub bv: Range<usize>,
    pub wo: Range<usize>,
    pub bo: Range<usize>,
    pub ln2_g: Range<usize>,
    pub ln2_b: Range<usize>,
    pub w1: Range<usize>,
    pub b1: Range<usize>,
    pub w2: Range<usize>,
    pub b2: Range<usize>,
}

/// Offsets of every tensor in the flat parameter vector. The encoder body
/// (embeddings, blocks, final norm) occupies `0..encoder_end`; the heads
/// follow.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub token_embed: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub lnf_g: Range<usize>,
    pub lnf_b: Range<usize>,
    pub encoder_end: usize,
    pub sem_w: Range<usize>,
    pub sem_b: Range<usize>,
    pub topic_w: Range<usize>,
    pub topic_b: Range<usize>,
    pub total: usize,
}

struct Cursor(usize);

impl Cursor {
    fn take(&mut self, n: usize) -> Range<usize> {
        let r = self.0..self.0 + n;
        self.0 += n;
        r
    }
}

impl Layout {
    pub fn new(c: &EncoderConfig) -> Self {
        let (d, h) = (c.embed_dim, c.hidden_dim);
        let mut cur = Cursor(0);
        let token_embed = cur.take(c.vocab_size * d);
        let blocks = (0..c.num_transformer_blocks)
            .map(|_| BlockLayout {
                ln1_g: cur.take(d),
                ln1_b: cur.take(d),
                wq: cur.take(d * d),
                bq: cur.take(d),
                wk: cur.take(d * d),
                bk: cur.take(d),
                wv: cur.take(d * d),
                bv: cur.take(d),
                wo: cur.take(d * d),
                bo: cur.take(d),
                ln2_g: cur.take(d),
                ln2_b: cur.take(d),
                w1: cur.take(d * h),
                b1: cur.take(h),
                w2: cur.take(h * d),
                b2: cur.take(d),
            })
            .collect::<Vec<_>>();
        let final_norm = if blocks.is_empty() { 0 } else { d };
        let lnf_g = cur.take(final_norm);
        let lnf_b = cur.take(final_norm);
        let encoder_end = cur.0;
        let sem_w = cur.take(d * c.semantic_dim);
        let sem_b = cur.take(c.semantic_dim);
        let topic_w = cur.take(d * c.num_topics);
        let topic_b = cur.take(c.num_topics);
        Layout {
            token_embed,
            blocks,
            lnf_g,
            lnf_b,
            encoder_end,
            sem_w,
            sem_b,
            topic_w,
            topic_b,
            total: cur.0,
        }
    }

    /// Named parameter groups, in storage order; empty groups are omitted.
    pub fn groups(&self) -> Vec<(String, Range<usize>)> {
        let mut g = vec![("token_embed".to_string(), self.token_embed.clone())];
        for (i, b) in self.blocks.iter().enumerate() {
            let parts = [
                ("ln1_g", &b.ln1_g),
                ("ln1_b", &b.ln1_b),
                ("wq", &b.wq),
                ("bq", &b.bq),
                ("wk", &b.wk),
                ("bk", &b.bk),
                ("wv", &b.wv),
                ("bv", &b.bv),
                ("wo", &b.wo),
                ("bo", &b.bo),
                ("ln2_g", &b.ln2_g),
                ("ln2_b", &b.ln2_b),
                ("w1", &b.w1),
                ("b1", &b.b1),
                ("w2", &b.w2),
                ("b2", &b.b2),
            ];
            g.extend(parts.iter().map(|(n, r)| (format!("block{i}.{n}"), (*r).clone())));
        }
        g.push(("lnf_g".into(), self.lnf_g.clone()));
        g.push(("lnf_b".into(), self.lnf_b.clone()));
        g.push(("semantic.w".into(), self.sem_w.clone()));
        g.push(("semantic.b".into(), self.sem_b.clone()));
        g.push(("topic.w".into(), self.topic_w.clone()));
        g.push(("topic.b".into(), self.topic_b.clone()));
        g.retain(|(_, r)| !r.is_empty());
        g
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub layout: Layout,
    pub data: Vec<f64>,
}

fn fill_normal(r: &mut crate::util::Rng, out: &mut [f64], std: f64) {
    for v in out {
        let z: f64 = StandardNormal.sample(r);
        *v = z * std;
    }
}

/// Seeded initialization: weights `N(0, 1/fan_in)`, biases zero, norm gains one.
pub fn init(config: &EncoderConfig) -> Result<EncoderParams> {
    config.validate()?;
    let layout = Layout::new(config);
    let mut data = vec![0.0; layout.total];
    let mut r = rng(config.seed, 0xe4c0);
    let d = config.embed_dim as f64;
    let h = config.hidden_dim as f64;
    fill_normal(&mut r, &mut data[layout.token_embed.clone()], 1.0 / d.sqrt());
    for b in &layout.blocks {
        data[b.ln1_g.clone()].fill(1.0);
        data[b.ln2_g.clone()].fill(1.0);
        for w in [&b.wq, &b.wk, &b.wv, &b.wo, &b.w1] {
            fill_normal(&mut r, &mut data[w.clone()], 1.0 / d.sqrt());
        }
        fill_normal(&mut r, &mut data[b.w2.clone()], 1.0 / h.sqrt());
    }
    data[layout.lnf_g.clone()].fill(1.0);
    fill_normal(&mut r, &mut data[layout.sem_w.clone()], 1.0 / d.sqrt());
    fill_normal(&mut r, &mut data[layout.topic_w.clone()], 1.0 / d.sqrt());
    Ok(EncoderParams {
        config: config.clone(),
        layout,
        data,
    })
}

impl EncoderParams {
    pub fn num_params(&self) -> usize {
        self.data.len()
    }

    pub fn slice(&self, r: &Range<usize>) -> &[f64] {
        &self.data[r.clone()]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

const CHECKPOINT_FORMAT: &str = "docembed-encoder";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    version: u32,
    config: EncoderConfig,
    num_params: usize,
}

/// JSON header line, then the parameters as little-endian `f64`.
pub fn save_checkpoint(params: &EncoderParams, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        config: params.config.clone(),
        num_params: params.data.len(),
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for v in &params.data {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let header: CheckpointHeader = serde_json::from_str(&line).map_err(|e| Error::parse(&ctx, e.to_string()))?;
    if header.format != CHECKPOINT_FORMAT || header.version != CHECKPOINT_VERSION {
        return Err(Error::parse(
            ctx,
            format!("unsupported checkpoint {} v{}", header.format, header.version),
        ));
    }
    header.config.validate()?;
    let layout = Layout::new(&header.config);
    if layout.total != header.num_params {
        return Err(Error::parse(ctx, "parameter count does not match config"));
    }
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    if bytes.len() != 8 * header.num_params {
        return Err(Error::parse(ctx, "truncated parameter data"));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(EncoderParams {
        config: header.config,
        layout,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(blocks: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 20,
            embed_dim: 8,
            num_transformer_blocks: blocks,
            num_heads: 2,
            hidden_dim: 12,
            semantic_dim: 4,
            num_topics: 3,
            seed: 7,
        }
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(init(&small(1)).unwrap(), init(&small(1)).unwrap());
        let mut other = small(1);
        other.seed = 8;
        assert_ne!(init(&small(1)).unwrap().data, init(&other).unwrap().data);
    }

    #[test]
    fn layout_is_contiguous() {
        for blocks in 0..=2 {
            let l = Layout::new(&small(blocks));
            let groups = l.groups();
            let mut next = 0;
            for (_, r) in &groups {
                assert_eq!(r.start, next);
                next = r.end;
            }
            assert_eq!(next, l.total);
        }
    }

    #[test]
    fn invalid_heads_rejected() {
        let mut c = small(1);
        c.num_heads = 3;
        assert!(init(&c).is_err());
        c.num_transformer_blocks = 3;
        c.num_heads = 2;
        assert!(init(&c).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.ckpt");
        let params = init(&small(2)).unwrap();
        save_checkpoint(&params, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), params);
    }
}
