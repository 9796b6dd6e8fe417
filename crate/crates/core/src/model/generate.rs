use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Float, Graph, ParamStore, Var};
use crate::corpus::{GrayImage, Vocabulary, END_ID, START_ID};
use crate::{Error, Result};

use super::transformer::attend;
use super::{linear, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "width")]
pub enum DecodeMode {
    #[default]
    Greedy,
    Beam(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationOutput {
    /// Starts with `<start>`; ends with `<end>` unless cut at `max_len`.
    pub token_ids: Vec<usize>,
    /// `[layer][head][step][memory]` cross-attention weights; one step per
    /// emitted token.
    pub attention: Vec<Vec<Vec<Vec<f64>>>>,
}

impl GenerationOutput {
    /// Emitted tokens, i.e. everything after `<start>`.
    pub fn emitted(&self) -> &[usize] {
        &self.token_ids[1..]
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerCache {
    k: Option<Var>,
    v: Option<Var>,
    cross_k: Var,
    cross_v: Var,
}

/// Per-sequence decoder state: self-attention key/value caches plus the
/// projected memory.
#[derive(Debug, Clone)]
pub struct DecodeState {
    layers: Vec<LayerCache>,
    pos: usize,
}

/// Logits and per-layer, per-head attention rows of one decoding step.
pub struct Step<T> {
    pub logits: Vec<T>,
    pub attention: Vec<Vec<Vec<f64>>>,
}

impl Model {
    pub fn start_decoding<T: Float>(&self, g: &mut Graph<T>, s: &ParamStore<T>, memory: Var) -> Result<DecodeState> {
        let layers = self
            .dec
            .iter()
            .map(|l| {
                Ok(LayerCache {
                    k: None,
                    v: None,
                    cross_k: linear(g, s, memory, l.cross.k)?,
                    cross_v: linear(g, s, memory, l.cross.v)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(DecodeState { layers, pos: 0 })
    }

    /// Feeds one token at the next position and returns the logits for the
    /// following one.
    pub fn decode_step<T: Float>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        state: &mut DecodeState,
        token: usize,
    ) -> Result<Step<T>> {
        let heads = self.config.n_heads;
        let mut x = self.embed_tokens(g, s, &[token], state.pos)?;
        let mut attention = Vec::with_capacity(self.dec.len());
        for (layer, cache) in self.dec.iter().zip(state.layers.iter_mut()) {
            let sa = &layer.self_attn;
            let q = linear(g, s, x, sa.q)?;
            let k = linear(g, s, x, sa.k)?;
            let v = linear(g, s, x, sa.v)?;
            let k = match cache.k {
                Some(old) => g.concat(&[old, k], 0)?,
                None => k,
            };
            let v = match cache.v {
                Some(old) => g.concat(&[old, v], 0)?,
                None => v,
            };
            cache.k = Some(k);
            cache.v = Some(v);
            let (a, _) = attend(g, s, sa, heads, q, k, v, None)?;
            let (ck, cv) = (cache.cross_k, cache.cross_v);
            let (y, w) = self.decoder_layer(g, s, layer, x, a, |g, h| {
                let q = linear(g, s, h, layer.cross.q)?;
                attend(g, s, &layer.cross, heads, q, ck, cv, None)
            })?;
            x = y;
            attention.push(
                w.iter()
                    .map(|&w| g.data(w).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect())
                    .collect(),
            );
        }
        state.pos += 1;
        let logits = linear(g, s, x, self.out)?;
        Ok(Step { logits: g.data(logits).to_vec(), attention })
    }

    /// Autoregressive decoding from `<start>` over an already-built memory.
    pub fn generate<T: Float>(
        &self,
        g: &mut Graph<T>,
        s: &ParamStore<T>,
        memory: Var,
        mode: DecodeMode,
    ) -> Result<GenerationOutput> {
        match mode {
            DecodeMode::Greedy => self.greedy(g, s, memory),
            DecodeMode::Beam(0) => Err(Error::config("beam width must be positive")),
            DecodeMode::Beam(width) => self.beam(g, s, memory, width),
        }
    }

    /// Encodes an image pair and decodes on a fresh non-recording graph.
    pub fn generate_from_images<T: Float>(
        &self,
        s: &ParamStore<T>,
        pair: &[GrayImage; 2],
        mode: DecodeMode,
    ) -> Result<GenerationOutput> {
        let mut g = Graph::inference();
        let features = self.encode_images(&mut g, s, pair)?;
        let memory = self.memory(&mut g, s, &features)?;
        self.generate(&mut g, s, memory, mode)
    }

    fn empty_attention(&self) -> Vec<Vec<Vec<Vec<f64>>>> {
        vec![vec![Vec::new(); self.config.n_heads]; self.dec.len()]
    }

    fn greedy<T: Float>(&self, g: &mut Graph<T>, s: &ParamStore<T>, memory: Var) -> Result<GenerationOutput> {
        let mut state = self.start_decoding(g, s, memory)?;
        let mut tokens = vec![START_ID];
        let mut attention = self.empty_attention();
        while tokens.len() < self.config.max_len {
            let step = self.decode_step(g, s, &mut state, *tokens.last().expect("nonempty"))?;
            push_rows(&mut attention, step.attention);
            let next = argmax(&step.logits);
            tokens.push(next);
            if next == END_ID {
                break;
            }
        }
        Ok(GenerationOutput { token_ids: tokens, attention })
    }

    fn beam<T: Float>(&self, g: &mut Graph<T>, s: &ParamStore<T>, memory: Var, width: usize) -> Result<GenerationOutput> {
        struct Beam {
            tokens: Vec<usize>,
            score: f64,
            state: DecodeState,
            attention: Vec<Vec<Vec<Vec<f64>>>>,
        }
        let mut alive = vec![Beam {
            tokens: vec![START_ID],
            score: 0.0,
            state: self.start_decoding(g, s, memory)?,
            attention: self.empty_attention(),
        }];
        let mut finished: Vec<Beam> = Vec::new();
        while !alive.is_empty() && finished.len() < width {
            let mut steps = Vec::with_capacity(alive.len());
            let mut candidates = Vec::new();
            for (b, beam) in alive.iter_mut().enumerate() {
                let step = self.decode_step(g, s, &mut beam.state, *beam.tokens.last().expect("nonempty"))?;
                for (t, lp) in log_softmax(&step.logits).into_iter().enumerate() {
                    candidates.push((beam.score + lp, b, t));
                }
                steps.push(step.attention);
            }
            candidates.sort_by(|x, y| {
                total_desc(x.0, y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2))
            });
            candidates.truncate(width - finished.len());
            let mut next = Vec::with_capacity(candidates.len());
            for (score, b, t) in candidates {
                let parent = &alive[b];
                let mut tokens = parent.tokens.clone();
                tokens.push(t);
                let mut attention = parent.attention.clone();
                push_rows(&mut attention, steps[b].clone());
                let beam = Beam { tokens, score, state: parent.state.clone(), attention };
                if t == END_ID || beam.tokens.len() >= self.config.max_len {
                    finished.push(beam);
                } else {
                    next.push(beam);
                }
            }
            alive = next;
        }
        finished.extend(alive);
        // Stable sort keeps earlier-finished beams first on equal scores.
        finished.sort_by(|a, b| total_desc(a.score, b.score));
        let best = finished.into_iter().next().expect("at least one hypothesis");
        Ok(GenerationOutput { token_ids: best.tokens, attention: best.attention })
    }
}

fn push_rows(into: &mut [Vec<Vec<Vec<f64>>>], step: Vec<Vec<Vec<f64>>>) {
    for (layer, heads) in into.iter_mut().zip(step) {
        for (rows, row) in layer.iter_mut().zip(heads) {
            rows.push(row);
        }
    }
}

fn total_desc(a: f64, b: f64) -> Ordering {
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    key(b).partial_cmp(&key(a)).unwrap_or(Ordering::Equal)
}

/// Index of the largest value; ties go to the lowest index, NaN never wins.
fn argmax<T: Float>(xs: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] || xs[best].is_nan() {
            best = i;
        }
    }
    best
}

fn log_softmax<T: Float>(xs: &[T]) -> Vec<f64> {
    let v: Vec<f64> = xs.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    v.into_iter().map(|x| x - lse).collect()
}

/// Final-layer cross-attention averaged over heads, one row per emitted token.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    pub tokens: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
}

pub fn export_attention(output: &GenerationOutput) -> AttentionMap {
    let tokens = output.emitted().to_vec();
    let weights = match output.attention.last() {
        Some(heads) if !heads.is_empty() => {
            let n = heads.len() as f64;
            (0..tokens.len())
                .map(|t| {
                    let m = heads[0][t].len();
                    (0..m).map(|j| heads.iter().map(|h| h[t][j]).sum::<f64>() / n).collect()
                })
                .collect()
        }
        _ => Vec::new(),
    };
    AttentionMap { tokens, weights }
}

impl AttentionMap {
    /// CSV with a `token` column followed by one column per memory slot.
    pub fn to_csv(&self, vocab: &Vocabulary) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let m = self.weights.first().map_or(0, Vec::len);
        let mut header = vec!["token".to_string()];
        header.extend((0..m).map(|j| format!("m{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for (&t, row) in self.tokens.iter().zip(&self.weights) {
            let mut rec = vec![vocab.token(t).unwrap_or("<unk>").to_string()];
            rec.extend(row.iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}
