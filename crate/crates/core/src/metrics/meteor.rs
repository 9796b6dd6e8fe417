use std::collections::HashMap;

use super::check_pairing;
use crate::Result;

const ALPHA: f64 = 0.9;
const BETA: f64 = 3.0;
const GAMMA: f64 = 0.5;
/// Memo entries before the exact chunk search gives up.
const SEARCH_BUDGET: usize = 200_000;

/// Size of an exact-match alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
}

struct Search {
    /// Reference positions holding each candidate token.
    options: Vec<Vec<usize>>,
    /// Token id per candidate position.
    cand_tok: Vec<usize>,
    /// Occurrences of `cand_tok[i]` at positions >= i.
    suffix: Vec<usize>,
    need: Vec<usize>,
    tok_mask: Vec<u128>,
    memo: HashMap<(usize, u128, usize), usize>,
}

impl Search {
    /// Max number of adjacent matched pairs (cand i-1, i) -> (j-1, j), or
    /// `None` when over budget. `prev` is `matched ref + 1`, or 0.
    fn best(&mut self, i: usize, mask: u128, prev: usize) -> Option<usize> {
        if i == self.cand_tok.len() {
            return Some(0);
        }
        if let Some(&v) = self.memo.get(&(i, mask, prev)) {
            return Some(v);
        }
        if self.memo.len() >= SEARCH_BUDGET {
            return None;
        }
        let t = self.cand_tok[i];
        let used = (mask & self.tok_mask.get(t).copied().unwrap_or(0)).count_ones() as usize;
        let need = self.need.get(t).copied().unwrap_or(0) - used;
        let mut best = None::<usize>;
        if need > 0 {
            for k in 0..self.options[i].len() {
                let j = self.options[i][k];
                if mask & (1u128 << j) != 0 {
                    continue;
                }
                let bonus = usize::from(prev == j && j > 0);
                let v = self.best(i + 1, mask | (1u128 << j), j + 1)? + bonus;
                best = Some(best.map_or(v, |b: usize| b.max(v)));
            }
        }
        if self.suffix[i] > need {
            let v = self.best(i + 1, mask, 0)?;
            best = Some(best.map_or(v, |b: usize| b.max(v)));
        }
        let v = best.expect("either a match or a skip is always feasible");
        self.memo.insert((i, mask, prev), v);
        Some(v)
    }
}

fn count_chunks(pairs: &[(usize, usize)]) -> usize {
    let mut chunks = 0;
    let mut last: Option<(usize, usize)> = None;
    for &(i, j) in pairs {
        if last != Some((i.wrapping_sub(1), j.wrapping_sub(1))) {
            chunks += 1;
        }
        last = Some((i, j));
    }
    chunks
}

/// Left-to-right alignment that extends the current chunk when it can.
fn greedy(candidate: &[String], reference: &[String]) -> Alignment {
    let mut used = vec![false; reference.len()];
    let mut pairs = Vec::new();
    let mut prev: Option<usize> = None;
    for (i, tok) in candidate.iter().enumerate() {
        let next = prev.map(|p| p + 1).filter(|&j| j < reference.len() && !used[j] && &reference[j] == tok);
        let pick = next.or_else(|| (0..reference.len()).find(|&j| !used[j] && &reference[j] == tok));
        match pick {
            Some(j) => {
                used[j] = true;
                pairs.push((i, j));
                prev = Some(j);
            }
            None => prev = None,
        }
    }
    Alignment { matches: pairs.len(), chunks: count_chunks(&pairs) }
}

/// Exact unigram alignment with the most matches and, among those, the
/// fewest chunks. Falls back to a greedy alignment (same matches, possibly
/// more chunks) when the reference is longer than 128 tokens or the search
/// exceeds its budget.
pub fn align(candidate: &[String], reference: &[String]) -> Alignment {
    let quick = greedy(candidate, reference);
    if quick.matches <= 1 || quick.chunks == 1 || reference.len() > 128 {
        return quick;
    }
    let mut ids: HashMap<&str, usize> = HashMap::new();
    let mut ref_count = Vec::new();
    let mut tok_mask = Vec::new();
    for (j, t) in reference.iter().enumerate() {
        let next = ids.len();
        let id = *ids.entry(t.as_str()).or_insert(next);
        if id == ref_count.len() {
            ref_count.push(0);
            tok_mask.push(0u128);
        }
        ref_count[id] += 1;
        tok_mask[id] |= 1u128 << j;
    }
    let cand_tok: Vec<usize> = candidate.iter().map(|t| ids.get(t.as_str()).copied().unwrap_or(usize::MAX)).collect();
    let mut cand_count = vec![0usize; ref_count.len()];
    let mut suffix = vec![0usize; candidate.len()];
    for i in (0..candidate.len()).rev() {
        if let Some(c) = cand_count.get_mut(cand_tok[i]) {
            *c += 1;
            suffix[i] = *c;
        } else {
            suffix[i] = 1;
        }
    }
    let need: Vec<usize> = ref_count.iter().zip(&cand_count).map(|(&r, &c)| r.min(c)).collect();
    let options = cand_tok
        .iter()
        .map(|&t| tok_mask.get(t).map_or(Vec::new(), |&m| (0..reference.len()).filter(|&j| m & (1u128 << j) != 0).collect()))
        .collect();
    let mut search = Search { options, cand_tok, suffix, need, tok_mask, memo: HashMap::new() };
    match search.best(0, 0, 0) {
        Some(cont) => Alignment { matches: quick.matches, chunks: quick.matches - cont },
        None => quick,
    }
}

/// METEOR of one pair with its alignment.
pub fn meteor_pair(candidate: &[String], reference: &[String]) -> (f64, Alignment) {
    let a = align(candidate, reference);
    if a.matches == 0 {
        return (0.0, a);
    }
    let m = a.matches as f64;
    let p = m / candidate.len() as f64;
    let r = m / reference.len() as f64;
    let fmean = p * r / (ALPHA * p + (1.0 - ALPHA) * r);
    let penalty = GAMMA * (a.chunks as f64 / m).powf(BETA);
    (fmean * (1.0 - penalty), a)
}

/// Mean pairwise exact-match METEOR (no stemming or synonyms).
pub fn meteor_exact(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<f64> {
    check_pairing(candidates.len(), references.len())?;
    if candidates.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = candidates.iter().zip(references).map(|(c, r)| meteor_pair(c, r).0).sum();
    Ok(sum / candidates.len() as f64)
}
