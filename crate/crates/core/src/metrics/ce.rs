use std::path::Path;

use serde::{Deserialize, Serialize};

use super::check_pairing;
use crate::corpus::{DefaultSegmenter, Segmenter};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub surface_forms: Vec<String>,
}

/// Key entities of a dataset and the phrases that signal each of them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityLexicon {
    pub entities: Vec<Entity>,
}

impl EntityLexicon {
    pub fn new(entities: Vec<Entity>) -> Result<Self> {
        if entities.is_empty() {
            return Err(Error::config("entity lexicon is empty"));
        }
        for e in &entities {
            if e.surface_forms.is_empty() || e.surface_forms.iter().any(|s| s.trim().is_empty()) {
                return Err(Error::config(format!("entity {:?} has an empty surface form", e.name)));
            }
        }
        Ok(Self { entities })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let lex: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::new(lex.entities)
    }

    /// Mention vector of a tokenised report. A surface form matches when
    /// its tokens (segmented like report text) occur contiguously,
    /// compared case-insensitively.
    pub fn detect(&self, tokens: &[String]) -> Vec<bool> {
        let lower: Vec<String> = tokens.iter().map(|t| t.to_lowercase()).collect();
        self.entities
            .iter()
            .map(|e| {
                e.surface_forms.iter().any(|form| {
                    let phrase: Vec<String> =
                        DefaultSegmenter.segment(form).into_iter().map(|t| t.to_lowercase()).collect();
                    !phrase.is_empty() && lower.windows(phrase.len()).any(|w| w == phrase.as_slice())
                })
            })
            .collect()
    }
}

/// Example-based multi-label scores; `accuracy` is subset accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CeMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-report precision, recall and F1 of `pred` against `truth`.
///
/// Empty prediction: precision 1. Empty truth: recall 1. Both empty: F1 1.
fn prf(truth: &[bool], pred: &[bool]) -> (f64, f64, f64) {
    let t = truth.iter().filter(|&&x| x).count();
    let p = pred.iter().filter(|&&x| x).count();
    let both = truth.iter().zip(pred).filter(|(&a, &b)| a && b).count();
    let precision = if p == 0 { 1.0 } else { both as f64 / p as f64 };
    let recall = if t == 0 { 1.0 } else { both as f64 / t as f64 };
    let f1 = if t + p == 0 { 1.0 } else { 2.0 * both as f64 / (t + p) as f64 };
    (precision, recall, f1)
}

pub fn ce_metrics(candidates: &[Vec<String>], references: &[Vec<String>], lexicon: &EntityLexicon) -> Result<CeMetrics> {
    check_pairing(candidates.len(), references.len())?;
    if lexicon.entities.is_empty() {
        return Err(Error::config("entity lexicon is empty"));
    }
    let n = candidates.len();
    if n == 0 {
        return Ok(CeMetrics { accuracy: 0.0, precision: 0.0, recall: 0.0, f1: 0.0 });
    }
    let (mut acc, mut prec, mut rec, mut f1) = (0.0, 0.0, 0.0, 0.0);
    for (c, r) in candidates.iter().zip(references) {
        let (truth, pred) = (lexicon.detect(r), lexicon.detect(c));
        let (p, q, f) = prf(&truth, &pred);
        acc += f64::from(u8::from(truth == pred));
        prec += p;
        rec += q;
        f1 += f;
    }
    let n = n as f64;
    Ok(CeMetrics { accuracy: acc / n, precision: prec / n, recall: rec / n, f1: f1 / n })
}
