//! Text-overlap (BLEU, ROUGE-L, METEOR) and clinical-entity metrics.
//!
//! All functions take token sequences without sentinels; see
//! [`strip_sentinels`].

mod ce;
mod meteor;
mod overlap;

use serde::{Deserialize, Serialize};

use crate::corpus::{END, PAD, START};
use crate::{Error, Result};

pub use ce::{ce_metrics, CeMetrics, Entity, EntityLexicon};
pub use meteor::{align, meteor_exact, meteor_pair, Alignment};
pub use overlap::{bleu, lcs_len, rouge_l, rouge_l_pair};

/// Drops `<pad>`, `<start>` and `<end>`.
pub fn strip_sentinels(tokens: &[String]) -> Vec<String> {
    tokens.iter().filter(|t| !matches!(t.as_str(), PAD | START | END)).cloned().collect()
}

pub(crate) fn check_pairing(candidates: usize, references: usize) -> Result<()> {
    if candidates == references {
        Ok(())
    } else {
        Err(Error::Pairing { candidates, references })
    }
}

/// Scores of one evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub meteor: f64,
    pub ce: CeMetrics,
    pub n_pairs: usize,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str =
        "n_pairs,bleu1,bleu2,bleu3,bleu4,rouge_l,meteor,ce_accuracy,ce_precision,ce_recall,ce_f1";

    pub fn csv_row(&self) -> String {
        let [b1, b2, b3, b4] = self.bleu;
        let c = &self.ce;
        format!(
            "{},{b1:.6},{b2:.6},{b3:.6},{b4:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.n_pairs, self.rouge_l, self.meteor, c.accuracy, c.precision, c.recall, c.f1
        )
    }
}

/// All metrics over paired candidate/reference token lists.
pub fn evaluate(candidates: &[Vec<String>], references: &[Vec<String>], lexicon: &EntityLexicon) -> Result<EvalReport> {
    Ok(EvalReport {
        bleu: bleu(candidates, references)?,
        rouge_l: rouge_l(candidates, references)?,
        meteor: meteor_exact(candidates, references)?,
        ce: ce_metrics(candidates, references, lexicon)?,
        n_pairs: candidates.len(),
    })
}
