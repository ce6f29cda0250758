use std::ops::Range;

use super::ops::{gelu, gelu_grad, layer_norm, layer_norm_backward, linear, linear_backward, positional_encoding, LnCache};
use super::EncoderParams;
use crate::error::{Error, Result};
use crate::text::{PackedSequence, PAD_ID};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderInput {
    pub token_ids: Vec<u32>,
    /// `n × n`; `None` lets every token attend to every non-pad token.
    pub attention_mask: Option<Vec<Vec<bool>>>,
    /// `None` means `0..n`.
    pub position_ids: Option<Vec<usize>>,
}

impl EncoderInput {
    pub fn new(token_ids: Vec<u32>) -> Self {
        EncoderInput {
            token_ids,
            attention_mask: None,
            position_ids: None,
        }
    }

    pub fn from_packed(p: &PackedSequence) -> Self {
        let p = if p.attention_mask.len() == p.len() && p.position_ids.len() == p.len() {
            p.clone()
        } else {
            crate::text::build_mask_and_positions(p.clone())
        };
        EncoderInput {
            token_ids: p.token_ids,
            attention_mask: Some(p.attention_mask),
            position_ids: Some(p.position_ids),
        }
    }

    fn allowed(&self, i: usize, j: usize) -> bool {
        match &self.attention_mask {
            Some(m) => m[i][j],
            None => self.token_ids[j] != PAD_ID,
        }
    }

    fn position(&self, i: usize) -> usize {
        self.position_ids.as_ref().map_or(i, |p| p[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub pooled: Vec<f64>,
    /// Unit norm.
    pub semantic: Vec<f64>,
    pub logits: Vec<f64>,
}

struct BlockCache {
    ln1: LnCache,
    h1: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// heads × n × n
    attn: Vec<f64>,
    o: Vec<f64>,
    ln2: LnCache,
    h2: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
}

pub struct ForwardCache {
    token_ids: Vec<u32>,
    stop_gradient: bool,
    blocks: Vec<BlockCache>,
    lnf: Option<LnCache>,
    pool_weights: Vec<(usize, f64)>,
    pooled: Vec<f64>,
    semantic: Vec<f64>,
    sem_norm: f64,
}

impl ForwardCache {
    pub fn stop_gradient(&self) -> bool {
        self.stop_gradient
    }
}

pub fn forward(params: &EncoderParams, input: &EncoderInput, stop_gradient: bool) -> Result<EncoderOutput> {
    forward_with_cache(params, input, stop_gradient).map(|(o, _)| o)
}

pub fn forward_with_cache(
    params: &EncoderParams,
    input: &EncoderInput,
    stop_gradient: bool,
) -> Result<(EncoderOutput, ForwardCache)> {
    let c = &params.config;
    let l = &params.layout;
    let (d, hd, nh, hid) = (c.embed_dim, c.head_dim(), c.num_heads, c.hidden_dim);
    let n = input.token_ids.len();
    if n == 0 {
        return Err(Error::invalid("empty token sequence"));
    }
    if let Some(&bad) = input.token_ids.iter().find(|&&t| t as usize >= c.vocab_size) {
        return Err(Error::invalid(format!("token id {bad} out of range for vocab size {}", c.vocab_size)));
    }
    if input.attention_mask.as_ref().is_some_and(|m| m.len() != n || m.iter().any(|r| r.len() != n))
        || input.position_ids.as_ref().is_some_and(|p| p.len() != n)
    {
        return Err(Error::invalid("attention mask or position ids do not match sequence length"));
    }

    let p = &params.data;
    let emb = &p[l.token_embed.clone()];
    let pe_scale = 1.0 / (d as f64).sqrt();
    let mut x = vec![0.0; n * d];
    let mut pe = vec![0.0; d];
    for (i, &t) in input.token_ids.iter().enumerate() {
        positional_encoding(input.position(i), d, &mut pe);
        let row = &mut x[i * d..(i + 1) * d];
        let e = &emb[t as usize * d..(t as usize + 1) * d];
        for j in 0..d {
            row[j] = e[j] + pe_scale * pe[j];
        }
    }

    let scale = 1.0 / (hd as f64).sqrt();
    let mut blocks = Vec::with_capacity(l.blocks.len());
    for b in &l.blocks {
        let (h1, ln1) = layer_norm(&x, n, d, &p[b.ln1_g.clone()], &p[b.ln1_b.clone()]);
        let q = linear(&h1, n, d, &p[b.wq.clone()], &p[b.bq.clone()], d);
        let k = linear(&h1, n, d, &p[b.wk.clone()], &p[b.bk.clone()], d);
        let v = linear(&h1, n, d, &p[b.wv.clone()], &p[b.bv.clone()], d);
        let mut attn = vec![0.0; nh * n * n];
        let mut o = vec![0.0; n * d];
        for h in 0..nh {
            let off = h * hd;
            for i in 0..n {
                let a = &mut attn[(h * n + i) * n..(h * n + i + 1) * n];
                let qi = &q[i * d + off..i * d + off + hd];
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if input.allowed(i, j) {
                        let kj = &k[j * d + off..j * d + off + hd];
                        let s = qi.iter().zip(kj).map(|(x, y)| x * y).sum::<f64>() * scale;
                        a[j] = s;
                        max = max.max(s);
                    } else {
                        a[j] = f64::NEG_INFINITY;
                    }
                }
                if max == f64::NEG_INFINITY {
                    a.fill(0.0);
                    continue;
                }
                let mut z = 0.0;
                for s in a.iter_mut() {
                    *s = (*s - max).exp();
                    z += *s;
                }
                let oi = &mut o[i * d + off..i * d + off + hd];
                for j in 0..n {
                    a[j] /= z;
                    if a[j] != 0.0 {
                        let vj = &v[j * d + off..j * d + off + hd];
                        for (ov, vv) in oi.iter_mut().zip(vj) {
                            *ov += a[j] * vv;
                        }
                    }
                }
            }
        }
        let attn_out = linear(&o, n, d, &p[b.wo.clone()], &p[b.bo.clone()], d);
        for (xv, av) in x.iter_mut().zip(&attn_out) {
            *xv += av;
        }
        let (h2, ln2) = layer_norm(&x, n, d, &p[b.ln2_g.clone()], &p[b.ln2_b.clone()]);
        let pre = linear(&h2, n, d, &p[b.w1.clone()], &p[b.b1.clone()], hid);
        let act: Vec<f64> = pre.iter().map(|&z| gelu(z)).collect();
        let ff = linear(&act, n, hid, &p[b.w2.clone()], &p[b.b2.clone()], d);
        for (xv, fv) in x.iter_mut().zip(&ff) {
            *xv += fv;
        }
        blocks.push(BlockCache {
            ln1,
            h1,
            q,
            k,
            v,
            attn,
            o,
            ln2,
            h2,
            pre,
            act,
        });
    }

    let (xf, lnf) = if blocks.is_empty() {
        (x, None)
    } else {
        let (y, cache) = layer_norm(&x, n, d, &p[l.lnf_g.clone()], &p[l.lnf_b.clone()]);
        (y, Some(cache))
    };

    let pool_weights = if blocks.is_empty() {
        let members: Vec<usize> = (0..n)
            .filter(|&j| input.token_ids[j] != PAD_ID && input.allowed(0, j))
            .collect();
        let members = if members.is_empty() { vec![0] } else { members };
        let w = 1.0 / members.len() as f64;
        members.into_iter().map(|j| (j, w)).collect()
    } else {
        vec![(0, 1.0)]
    };
    let mut pooled = vec![0.0; d];
    for &(j, w) in &pool_weights {
        for (pv, xv) in pooled.iter_mut().zip(&xf[j * d..(j + 1) * d]) {
            *pv += w * xv;
        }
    }

    let sem_raw = linear(&pooled, 1, d, &p[l.sem_w.clone()], &p[l.sem_b.clone()], c.semantic_dim);
    let sem_norm = sem_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(sem_norm.is_finite() && sem_norm > 0.0) {
        return Err(Error::Numeric(format!("semantic projection has norm {sem_norm}")));
    }
    let semantic: Vec<f64> = sem_raw.iter().map(|v| v / sem_norm).collect();
    let logits = linear(&pooled, 1, d, &p[l.topic_w.clone()], &p[l.topic_b.clone()], c.num_topics);

    let out = EncoderOutput {
        pooled: pooled.clone(),
        semantic: semantic.clone(),
        logits,
    };
    let cache = ForwardCache {
        token_ids: input.token_ids.clone(),
        stop_gradient,
        blocks,
        lnf,
        pool_weights,
        pooled,
        semantic,
        sem_norm,
    };
    Ok((out, cache))
}

/// Two disjoint mutable slices, `a` before `b`.
fn pair_mut<'a>(g: &'a mut [f64], a: &Range<usize>, b: &Range<usize>) -> (&'a mut [f64], &'a mut [f64]) {
    debug_assert!(a.end <= b.start);
    let (lo, hi) = g.split_at_mut(b.start);
    (&mut lo[a.clone()], &mut hi[..b.len()])
}

/// Accumulates into `grad` the gradient of a loss whose derivatives with
/// respect to this tower's `semantic` and `logits` outputs are given. Heads
/// always receive gradient; the encoder body only when the tower was run
/// without stop-gradient.
pub fn backward(
    params: &EncoderParams,
    input: &EncoderInput,
    cache: &ForwardCache,
    d_semantic: &[f64],
    d_logits: &[f64],
    grad: &mut [f64],
) {
    let c = &params.config;
    let l = &params.layout;
    let p = &params.data;
    let (d, hd, nh, hid) = (c.embed_dim, c.head_dim(), c.num_heads, c.hidden_dim);
    let n = cache.token_ids.len();
    debug_assert_eq!(grad.len(), p.len());

    let proj: f64 = cache.semantic.iter().zip(d_semantic).map(|(s, g)| s * g).sum();
    let d_sem_raw: Vec<f64> = cache
        .semantic
        .iter()
        .zip(d_semantic)
        .map(|(s, g)| (g - s * proj) / cache.sem_norm)
        .collect();
    let mut d_pooled = vec![0.0; d];
    {
        let (gw, gb) = pair_mut(grad, &l.sem_w, &l.sem_b);
        let dp = linear_backward(&cache.pooled, &d_sem_raw, 1, d, c.semantic_dim, &p[l.sem_w.clone()], gw, gb);
        d_pooled.iter_mut().zip(dp).for_each(|(a, b)| *a += b);
    }
    {
        let (gw, gb) = pair_mut(grad, &l.topic_w, &l.topic_b);
        let dp = linear_backward(&cache.pooled, d_logits, 1, d, c.num_topics, &p[l.topic_w.clone()], gw, gb);
        d_pooled.iter_mut().zip(dp).for_each(|(a, b)| *a += b);
    }
    if cache.stop_gradient {
        return;
    }

    let mut dx = vec![0.0; n * d];
    for &(j, w) in &cache.pool_weights {
        for (g, dp) in dx[j * d..(j + 1) * d].iter_mut().zip(&d_pooled) {
            *g += w * dp;
        }
    }
    if let Some(lnf) = &cache.lnf {
        let (gg, gb) = pair_mut(grad, &l.lnf_g, &l.lnf_b);
        dx = layer_norm_backward(lnf, &dx, n, d, &p[l.lnf_g.clone()], gg, gb);
    }

    let scale = 1.0 / (hd as f64).sqrt();
    for (b, bc) in l.blocks.iter().zip(&cache.blocks).rev() {
        let dact = {
            let (gw, gb) = pair_mut(grad, &b.w2, &b.b2);
            linear_backward(&bc.act, &dx, n, hid, d, &p[b.w2.clone()], gw, gb)
        };
        let dpre: Vec<f64> = dact.iter().zip(&bc.pre).map(|(g, &z)| g * gelu_grad(z)).collect();
        let dh2 = {
            let (gw, gb) = pair_mut(grad, &b.w1, &b.b1);
            linear_backward(&bc.h2, &dpre, n, d, hid, &p[b.w1.clone()], gw, gb)
        };
        let dln2 = {
            let (gg, gb) = pair_mut(grad, &b.ln2_g, &b.ln2_b);
            layer_norm_backward(&bc.ln2, &dh2, n, d, &p[b.ln2_g.clone()], gg, gb)
        };
        for (a, v) in dx.iter_mut().zip(dln2) {
            *a += v;
        }

        let d_o = {
            let (gw, gb) = pair_mut(grad, &b.wo, &b.bo);
            linear_backward(&bc.o, &dx, n, d, d, &p[b.wo.clone()], gw, gb)
        };
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let mut da = vec![0.0; n];
        for h in 0..nh {
            let off = h * hd;
            for i in 0..n {
                let a = &bc.attn[(h * n + i) * n..(h * n + i + 1) * n];
                let doi = &d_o[i * d + off..i * d + off + hd];
                let mut dot = 0.0;
                for j in 0..n {
                    if a[j] == 0.0 {
                        da[j] = 0.0;
                        continue;
                    }
                    let vj = &bc.v[j * d + off..j * d + off + hd];
                    da[j] = doi.iter().zip(vj).map(|(x, y)| x * y).sum();
                    dot += a[j] * da[j];
                    for (g, &x) in dv[j * d + off..j * d + off + hd].iter_mut().zip(doi) {
                        *g += a[j] * x;
                    }
                }
                for j in 0..n {
                    if a[j] == 0.0 {
                        continue;
                    }
                    let ds = a[j] * (da[j] - dot) * scale;
                    for t in 0..hd {
                        dq[i * d + off + t] += ds * bc.k[j * d + off + t];
                        dk[j * d + off + t] += ds * bc.q[i * d + off + t];
                    }
                }
            }
        }
        let mut dh1 = vec![0.0; n * d];
        for (dproj, w, bias) in [(&dq, &b.wq, &b.bq), (&dk, &b.wk, &b.bk), (&dv, &b.wv, &b.bv)] {
            let (gw, gb) = pair_mut(grad, w, bias);
            let part = linear_backward(&bc.h1, dproj, n, d, d, &p[w.clone()], gw, gb);
            for (a, v) in dh1.iter_mut().zip(part) {
                *a += v;
            }
        }
        let dln1 = {
            let (gg, gb) = pair_mut(grad, &b.ln1_g, &b.ln1_b);
            layer_norm_backward(&bc.ln1, &dh1, n, d, &p[b.ln1_g.clone()], gg, gb)
        };
        for (a, v) in dx.iter_mut().zip(dln1) {
            *a += v;
        }
    }

    let ge = &mut grad[l.token_embed.clone()];
    for (i, &t) in input.token_ids.iter().enumerate() {
        for (g, v) in ge[t as usize * d..(t as usize + 1) * d].iter_mut().zip(&dx[i * d..(i + 1) * d]) {
            *g += v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{init, EncoderConfig};

    fn config(blocks: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 30,
            embed_dim: 8,
            num_transformer_blocks: blocks,
            num_heads: 2,
            hidden_dim: 10,
            semantic_dim: 5,
            num_topics: 3,
            seed: 3,
        }
    }

    #[test]
    fn semantic_is_unit_norm_and_shapes_match() {
        for blocks in 0..=2 {
            let p = init(&config(blocks)).unwrap();
            let out = forward(&p, &EncoderInput::new(vec![1, 5, 7, 2]), false).unwrap();
            let norm: f64 = out.semantic.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            assert_eq!(out.semantic.len(), 5);
            assert_eq!(out.logits.len(), 3);
            assert_eq!(out.pooled.len(), 8);
        }
    }

    #[test]
    fn out_of_range_id_is_error() {
        let p = init(&config(1)).unwrap();
        assert!(forward(&p, &EncoderInput::new(vec![1, 30]), false).is_err());
    }

    #[test]
    fn foreign_segment_does_not_leak() {
        for blocks in 0..=2 {
            let p = init(&config(blocks)).unwrap();
            let alone = EncoderInput::from_packed(&PackedSequence::single(vec![1, 4, 9, 2]));
            let packed = crate::text::build_mask_and_positions(PackedSequence {
                token_ids: vec![1, 4, 9, 2, 1, 11, 12, 13, 2],
                segment_boundaries: vec![0, 4],
                reason: crate::text::EmitReason::Threshold,
                position_ids: vec![],
                attention_mask: vec![],
            });
            let a = forward(&p, &alone, false).unwrap();
            let b = forward(&p, &EncoderInput::from_packed(&packed), false).unwrap();
            for (x, y) in a.pooled.iter().zip(&b.pooled) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn stop_gradient_leaves_body_untouched() {
        let p = init(&config(1)).unwrap();
        let input = EncoderInput::new(vec![1, 5, 7, 2]);
        let (_, cache) = forward_with_cache(&p, &input, true).unwrap();
        let mut g = vec![0.0; p.num_params()];
        backward(&p, &input, &cache, &[1.0; 5], &[1.0; 3], &mut g);
        assert!(g[..p.layout.encoder_end].iter().all(|&v| v == 0.0));
        assert!(g[p.layout.encoder_end..].iter().any(|&v| v != 0.0));
    }
}
