use crate::autodiff::{Float, Graph, ParamStore, Tensor, Var};
use crate::{Error, Result};

use super::{linear, norm, Attention, DecoderLayer, Model};

/// Added to masked attention scores before the softmax.
const MASKED: f64 = -1e9;

/// Multi-head scaled dot-product attention of `query` rows over `kv` rows.
/// Returns the projected output and each head's weight matrix.
pub(crate) fn attention<T: Float>(
    g: &mut Graph<T>,
    s: &ParamStore<T>,
    a: &Attention,
    n_heads: usize,
    query: Var,
    kv: Var,
    mask: Option<Var>,
) -> Result<(Var, Vec<Var>)> {
    let q = linear(g, s, query, a.q)?;
    let k = linear(g, s, kv, a.k)?;
    let v = linear(g, s, kv, a.v)?;
    attend(g, s, a, n_heads, q, k, v, mask)
}

/// Attention from already-projected queries, keys and values.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attend<T: Float>(
    g: &mut Graph<T>,
    s: &ParamStore<T>,
    a: &Attention,
    n_heads: usize,
    q: Var,
    k: Var,
    v: Var,
    mask: Option<Var>,
) -> Result<(Var, Vec<Var>)> {
    let d = g.shape(q)[1];
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice(q, 1, h * dh, dh)?;
        let kh = g.slice(k, 1, h * dh, dh)?;
        let vh = g.slice(v, 1, h * dh, dh)?;
        let kt = g.transpose(kh)?;
        let raw = g.matmul(qh, kt)?;
        let mut scores = g.scale(raw, scale);
        if let Some(m) = mask {
            scores = g.add(scores, m)?;
        }
        let w = g.softmax(scores, 1)?;
        heads.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    let joined = g.concat(&heads, 1)?;
    Ok((linear(g, s, joined, a.o)?, weights))
}

pub(crate) fn feed_forward<T: Float>(
    g: &mut Graph<T>,
    s: &ParamStore<T>,
    ff1: super::Linear,
    ff2: super::Linear,
    x: Var,
) -> Result<Var> {
    let h = linear(g, s, x, ff1)?;
    let h = g.relu(h);
    linear(g, s, h, ff2)
}

fn causal_mask<T: Float>(g: &mut Graph<T>, n: usize) -> Result<Var> {
    let data = (0..n * n)
        .map(|i| if i % n > i / n { crate::autodiff::cst(MASKED) } else { T::zero() })
        .collect();
    Ok(g.constant(Tensor::new(&[n, n], data)?))
}

/// Decoder output of a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct Decoded {
    /// `[prefix_len, vocab_size]`.
    pub logits: Var,
    /// Cross-attention weights per layer, per head, each `[prefix_len, memory_len]`.
    pub cross_attention: Vec<Vec<Var>>,
}

impl Model {
    /// Transformer encoder over the memory sequence. No positional encoding
    /// is applied, so the encoder is equivariant to row permutations.
    pub fn transformer_encode<T: Float>(&self, g: &mut Graph<T>, s: &ParamStore<T>, patch_seq: Var) -> Result<Var> {
        let shape = g.shape(patch_seq).to_vec();
        if shape.len() != 2 || shape[0] == 0 || shape[1] != self.config.d_model {
            return Err(Error::shape(format!("encoder input {shape:?}")));
        }
        let mut x = patch_seq;
        for layer in &self.enc {
            let (a, _) = attention(g, s, &layer.attn, self.config.n_heads, x, x, None)?;
            let r = g.add(x, a)?;
            x = norm(g, s, r, layer.ln1)?;
            let f = feed_forward(g, s, layer.ff1, layer.ff2, x)?;
            let r = g.add(x, f)?;
            x = norm(g, s, r, layer.ln2)?;
        }
        Ok(x)
    }

    /// `x_t = w_t + p_t` for tokens placed at positions `start..`.
    pub(crate) fn embed_tokens<T: Float>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        ids: &[usize],
        start: usize,
    ) -> Result<Var> {
        if start + ids.len() > self.config.max_len {
            return Err(Error::Length { len: start + ids.len(), max_len: self.config.max_len });
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::shape(format!("token id {bad} outside vocabulary of {}", self.config.vocab_size)));
        }
        let tok = g.param(s, self.tok_embed);
        let pos = g.param(s, self.pos_embed);
        let w = g.embedding(tok, ids)?;
        let p = g.slice(pos, 0, start, ids.len())?;
        g.add(w, p)
    }

    pub(crate) fn decoder_layer<T: Float>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        layer: &DecoderLayer,
        x: Var,
        self_out: Var,
        cross_q_in: impl FnOnce(&mut Graph<T>, Var) -> Result<(Var, Vec<Var>)>,
    ) -> Result<(Var, Vec<Var>)> {
        let r = g.add(x, self_out)?;
        let x = norm(g, s, r, layer.ln1)?;
        let (c, w) = cross_q_in(g, x)?;
        let r = g.add(x, c)?;
        let x = norm(g, s, r, layer.ln2)?;
        let f = feed_forward(g, s, layer.ff1, layer.ff2, x)?;
        let r = g.add(x, f)?;
        Ok((norm(g, s, r, layer.ln3)?, w))
    }

    /// Teacher-forced decoding of a whole prefix with a causal mask.
    pub fn transformer_decode<T: Float>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        memory: Var,
        prefix: &[usize],
    ) -> Result<Decoded> {
        if prefix.is_empty() {
            return Err(Error::shape("empty decoder prefix"));
        }
        let heads = self.config.n_heads;
        let mut x = self.embed_tokens(g, s, prefix, 0)?;
        let mask = causal_mask(g, prefix.len())?;
        let mut cross_attention = Vec::with_capacity(self.dec.len());
        for layer in &self.dec {
            let (a, _) = attention(g, s, &layer.self_attn, heads, x, x, Some(mask))?;
            let (y, w) = self.decoder_layer(g, s, layer, x, a, |g, q| {
                attention(g, s, &layer.cross, heads, q, memory, None)
            })?;
            x = y;
            cross_attention.push(w);
        }
        let logits = linear(g, s, x, self.out)?;
        Ok(Decoded { logits, cross_attention })
    }

    /// Images to encoder memory.
    pub fn memory<T: Float>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        features: &super::VisualFeatures,
    ) -> Result<Var> {
        self.transformer_encode(g, s, features.patch_seq)
    }

    /// Input/target split for teacher forcing: inputs drop the last token,
    /// targets drop `<start>`. Over-long reports are cut to `max_len`.
    pub fn teacher_forcing_pair(&self, ids: &[usize]) -> Result<(Vec<usize>, Vec<usize>)> {
        let ids = &ids[..ids.len().min(self.config.max_len)];
        if ids.len() < 2 {
            return Err(Error::EmptyReport);
        }
        Ok((ids[..ids.len() - 1].to_vec(), ids[1..].to_vec()))
    }
}
