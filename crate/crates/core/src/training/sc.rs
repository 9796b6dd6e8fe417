//! Similarity comparer: relu-clamped cosine between report embeddings and
//! its negative-log loss.

use crate::autodiff::{Float, Graph, Tensor, Var};
use crate::corpus::{TokenizedReport, Vocabulary, RESERVED};
use crate::embedding::inverse_document_frequency;
use crate::{Error, Result};

/// Floor applied to `S` before the logarithm.
pub const SC_EPS: f64 = 1e-8;

/// TF-IDF over the training vocabulary, usable both on discrete token ids
/// and, linearly, on expected token counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ScEmbedder {
    idf: Vec<f64>,
}

impl ScEmbedder {
    pub fn fit(train: &[TokenizedReport], vocab: &Vocabulary) -> Result<Self> {
        let idf = inverse_document_frequency(train, vocab)?;
        Ok(Self { idf: idf.into_iter().map(f64::from).collect() })
    }

    pub fn from_idf(idf: Vec<f64>) -> Self {
        Self { idf }
    }

    /// Embedding width, `vocab_size - RESERVED`.
    pub fn width(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    /// Counts of content tokens times idf. Sentinels and `<unk>` carry no
    /// weight.
    pub fn embed_ids(&self, ids: &[usize]) -> Vec<f64> {
        let mut v = vec![0.0; self.idf.len()];
        for &i in ids {
            if i >= RESERVED && i - RESERVED < v.len() {
                v[i - RESERVED] += self.idf[i - RESERVED];
            }
        }
        v
    }

    /// Differentiable embedding of teacher-forced decoder distributions:
    /// softmax rows of `logits` summed over positions (expected counts),
    /// reserved columns dropped, times idf.
    pub fn embed_soft<T: Float>(&self, g: &mut Graph<T>, logits: Var) -> Result<Var> {
        let v = g.shape(logits)[1];
        if v != self.idf.len() + RESERVED {
            return Err(Error::shape(format!("logits width {v} vs embedder width {}", self.idf.len())));
        }
        let probs = g.softmax(logits, 1)?;
        let counts = g.sum_axis(probs, 0)?;
        let content = g.slice(counts, 0, RESERVED, self.idf.len())?;
        let idf = g.constant(Tensor::from_f64(&[self.idf.len()], &self.idf)?);
        g.mul(content, idf)
    }
}

/// `S = max(0, cos(pred, truth))`.
pub fn sc_similarity(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!("embedding widths {} vs {}", pred.len(), truth.len())));
    }
    let nt = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nt == 0.0 {
        return Err(Error::DegenerateEmbedding);
    }
    let np = pred.iter().map(|v| v * v).sum::<f64>().sqrt();
    if np == 0.0 {
        return Ok(0.0);
    }
    let dot: f64 = pred.iter().zip(truth).map(|(a, b)| a * b).sum();
    Ok((dot / (np * nt)).clamp(0.0, 1.0))
}

/// `-Σ log clamp(S_i, ε, 1)` over a batch's similarity scores.
pub fn sc_loss(similarities: &[f64]) -> f64 {
    similarities.iter().map(|&s| -s.clamp(SC_EPS, 1.0).ln()).sum()
}

/// Graph version of one report's `-log clamp(relu(cos), ε, 1)`.
pub fn sc_term<T: Float>(g: &mut Graph<T>, pred: Var, truth: &[f64]) -> Result<Var> {
    if truth.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateEmbedding);
    }
    let t = g.constant(Tensor::from_f64(&[truth.len()], truth)?);
    let cos = g.cosine_similarity(pred, t)?;
    let s = g.relu(cos);
    let s = g.clamp(s, SC_EPS, 1.0);
    let l = g.log(s);
    Ok(g.scale(l, -1.0))
}
