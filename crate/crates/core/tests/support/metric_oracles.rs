//! Naive reference implementations of the text metrics and a fixed suite
//! of short pairs. Shared by the metric tests and the acceptance run.
#![allow(dead_code)]

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Fixed candidate/reference pairs, short enough for exhaustive oracles.
pub const SUITE: &[(&str, &str)] = &[
    ("a b c", "a b d"),
    ("a", "a b c d"),
    ("a b c d", "a c d"),
    ("a", "a"),
    ("a b c d", "a b c d"),
    ("x y z", "a b c"),
    ("the cat sat on the mat", "the cat is on the mat"),
    ("the the the the", "the cat"),
    ("b a", "a b"),
    ("a b a b", "b a b a"),
    ("c a b", "a b c"),
    ("a b c a b c", "a b c"),
    ("nodule left lobe , border clear", "left lobe nodule , border clear"),
    ("a a b b", "b b a a"),
    ("a b x c d", "a b c d"),
    ("p q r s t", "t s r q p"),
    ("a", "b"),
    ("one two three four five", "one two three four five six seven"),
    ("liver size normal , echo even", "liver size normal , capsule smooth , echo even"),
    ("a b a c a", "a c a b a"),
    ("k l m", "k m l"),
    ("d c b a e", "a b c d e"),
];

pub fn ngrams(t: &[String], n: usize) -> Vec<Vec<String>> {
    if t.len() < n {
        return vec![];
    }
    (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
}

/// Corpus BLEU-1..4 by linear-scan n-gram counting.
pub fn bleu(pairs: &[(Vec<String>, Vec<String>)]) -> [f64; 4] {
    let (mut c_len, mut r_len) = (0.0, 0.0);
    let mut m = [0.0; 4];
    let mut tot = [0.0; 4];
    for (c, r) in pairs {
        c_len += c.len() as f64;
        r_len += r.len() as f64;
        for n in 1..=4 {
            let cg = ngrams(c, n);
            let rg = ngrams(r, n);
            let mut seen: Vec<&Vec<String>> = vec![];
            for g in &cg {
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let cc = cg.iter().filter(|x| *x == g).count();
                let rc = rg.iter().filter(|x| *x == g).count();
                m[n - 1] += cc.min(rc) as f64;
            }
            tot[n - 1] += cg.len() as f64;
        }
    }
    let bp = if c_len > r_len { 1.0 } else { (1.0 - r_len / c_len).exp() };
    let mut out = [0.0; 4];
    for k in 1..=4 {
        let ps: Vec<f64> = (0..k).map(|i| if tot[i] > 0.0 { m[i] / tot[i] } else { 0.0 }).collect();
        out[k - 1] = if ps.contains(&0.0) {
            0.0
        } else {
            bp * ps.iter().product::<f64>().powf(1.0 / k as f64)
        };
    }
    out
}

pub fn lcs(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    if a[0] == b[0] {
        1 + lcs(&a[1..], &b[1..])
    } else {
        lcs(&a[1..], b).max(lcs(a, &b[1..]))
    }
}

pub fn rouge_l(c: &[String], r: &[String]) -> f64 {
    let l = lcs(c, r) as f64;
    if l == 0.0 {
        return 0.0;
    }
    let (p, q) = (l / c.len() as f64, l / r.len() as f64);
    2.0 * p * q / (p + q)
}

/// Every partial one-to-one exact matching; returns (max matches, min
/// chunks among those).
pub fn best_alignment(c: &[String], r: &[String]) -> (usize, usize) {
    fn chunks(pairs: &[(usize, usize)]) -> usize {
        let mut n = 0;
        for (k, &(i, j)) in pairs.iter().enumerate() {
            if k == 0 || pairs[k - 1] != (i.wrapping_sub(1), j.wrapping_sub(1)) {
                n += 1;
            }
        }
        n
    }
    fn rec(c: &[String], r: &[String], i: usize, used: &mut Vec<bool>, pairs: &mut Vec<(usize, usize)>, best: &mut (usize, usize)) {
        if i == c.len() {
            let m = pairs.len();
            let ch = chunks(pairs);
            if m > best.0 || (m == best.0 && ch < best.1) {
                *best = (m, ch);
            }
            return;
        }
        rec(c, r, i + 1, used, pairs, best);
        for j in 0..r.len() {
            if !used[j] && r[j] == c[i] {
                used[j] = true;
                pairs.push((i, j));
                rec(c, r, i + 1, used, pairs, best);
                pairs.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    rec(c, r, 0, &mut vec![false; r.len()], &mut vec![], &mut best);
    best
}

pub fn meteor(c: &[String], r: &[String]) -> f64 {
    let (m, ch) = best_alignment(c, r);
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    let (p, q) = (m / c.len() as f64, m / r.len() as f64);
    let f = p * q / (0.9 * p + 0.1 * q);
    f * (1.0 - 0.5 * (ch as f64 / m).powi(3))
}
