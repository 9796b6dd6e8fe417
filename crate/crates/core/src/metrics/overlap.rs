use std::collections::HashMap;

use super::check_pairing;
use crate::Result;

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU-1..4 with one reference per candidate.
///
/// Clipped n-gram matches and totals are pooled over the corpus, the
/// brevity penalty uses pooled lengths, and BLEU-k is 0 once any `p_n` with
/// `n <= k` is 0.
pub fn bleu(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<[f64; 4]> {
    check_pairing(candidates.len(), references.len())?;
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                matched[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
            }
            total[n - 1] += c.len().saturating_sub(n - 1);
        }
    }
    if c_len == 0 {
        return Ok([0.0; 4]);
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len as f64 / c_len as f64).exp() };
    let mut out = [0.0; 4];
    let mut log_sum = 0.0;
    for k in 1..=4 {
        if matched[k - 1] == 0 {
            break;
        }
        log_sum += (matched[k - 1] as f64 / total[k - 1] as f64).ln();
        out[k - 1] = bp * (log_sum / k as f64).exp();
    }
    Ok(out)
}

/// Length of the longest common subsequence.
pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure (β = 1) of one pair.
pub fn rouge_l_pair(candidate: &[String], reference: &[String]) -> f64 {
    let l = lcs_len(candidate, reference) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let p = l / candidate.len() as f64;
    let r = l / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Mean pairwise ROUGE-L.
pub fn rouge_l(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    check_pairing(candidates.len(), references.len())?;
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = candidates.iter().zip(references).map(|(c, r)| rouge_l_pair(c, r)).sum();
    Ok(sum / candidates.len() as f64)
}
