#[path = "support/metric_oracles.rs"]
mod oracles;

use oracles::{toks, SUITE};
use proptest::prelude::*;
use reportgen_core::metrics::{
    align, bleu, ce_metrics, evaluate, meteor_exact, meteor_pair, rouge_l, rouge_l_pair, strip_sentinels, Entity,
    EntityLexicon,
};
use reportgen_core::Error;

fn one(c: &str, r: &str) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    (vec![toks(c)], vec![toks(r)])
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

#[test]
fn bleu_hand_values() {
    let (c, r) = one("a b c d", "a b c d");
    assert_eq!(bleu(&c, &r).unwrap(), [1.0; 4]);
    let (c, r) = one("a b c", "a b d");
    let b = bleu(&c, &r).unwrap();
    assert!(close(b[0], 2.0 / 3.0));
    assert!(close(b[1], (2.0f64 / 3.0 * 0.5).sqrt()));
    // no matching trigram
    assert_eq!(b[2], 0.0);
    let (c, r) = one("a", "a b c d");
    let b = bleu(&c, &r).unwrap();
    assert!(close(b[0], (1.0f64 - 4.0).exp()));
}

#[test]
fn bleu_is_not_monotone_in_k_in_general() {
    // p1 = 3/4 (one "e" clipped) but every candidate bigram matches
    let (c, r) = one("e c b e", "b e c b");
    let b = bleu(&c, &r).unwrap();
    assert!(close(b[0], 0.75));
    assert!(close(b[1], 0.75f64.sqrt()));
    assert!(b[1] > b[0]);
}

#[test]
fn rouge_hand_values() {
    assert!(close(rouge_l_pair(&toks("a b c d"), &toks("a b c d")), 1.0));
    assert!(close(rouge_l_pair(&toks("a b c d"), &toks("a c d")), 2.0 * 0.75 / 1.75));
    assert_eq!(rouge_l_pair(&toks("a b"), &toks("c d")), 0.0);
    assert_eq!(rouge_l_pair(&[], &[]), 0.0);
}

#[test]
fn meteor_hand_values() {
    let (s, a) = meteor_pair(&toks("a"), &toks("a"));
    assert_eq!((a.matches, a.chunks), (1, 1));
    assert!(close(s, 0.5));
    let (s, a) = meteor_pair(&toks("a b c d"), &toks("a b c d"));
    assert_eq!((a.matches, a.chunks), (4, 1));
    assert!(close(s, 1.0 - 0.5 / 64.0));
    assert_eq!(meteor_pair(&toks("x y"), &toks("a b")).0, 0.0);
}

#[test]
fn suite_matches_brute_force_oracles() {
    assert!(SUITE.len() >= 20);
    let pairs: Vec<_> = SUITE.iter().map(|(c, r)| (toks(c), toks(r))).collect();
    for (c, r) in &pairs {
        let cs = vec![c.clone()];
        let rs = vec![r.clone()];
        let b = bleu(&cs, &rs).unwrap();
        let o = oracles::bleu(&[(c.clone(), r.clone())]);
        for k in 0..4 {
            assert!(close(b[k], o[k]), "{c:?}/{r:?} BLEU-{}: {} vs {}", k + 1, b[k], o[k]);
        }
        assert!(close(rouge_l_pair(c, r), oracles::rouge_l(c, r)), "{c:?}/{r:?}");
        let (m, ch) = oracles::best_alignment(c, r);
        let a = align(c, r);
        assert_eq!((a.matches, a.chunks), (m, ch), "{c:?}/{r:?}");
        assert!(close(meteor_pair(c, r).0, oracles::meteor(c, r)));
    }
    let (cs, rs): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
    let b = bleu(&cs, &rs).unwrap();
    let o = oracles::bleu(&pairs);
    for k in 0..4 {
        assert!(close(b[k], o[k]));
    }
    let mean = pairs.iter().map(|(c, r)| oracles::rouge_l(c, r)).sum::<f64>() / pairs.len() as f64;
    assert!(close(rouge_l(&cs, &rs).unwrap(), mean));
    let mean = pairs.iter().map(|(c, r)| oracles::meteor(c, r)).sum::<f64>() / pairs.len() as f64;
    assert!(close(meteor_exact(&cs, &rs).unwrap(), mean));
}

#[test]
fn pairing_errors() {
    let a = vec![toks("a")];
    let b: Vec<Vec<String>> = vec![];
    assert!(matches!(bleu(&a, &b), Err(Error::Pairing { candidates: 1, references: 0 })));
    assert!(rouge_l(&a, &b).is_err());
    assert!(meteor_exact(&a, &b).is_err());
    assert!(ce_metrics(&a, &b, &lexicon()).is_err());
}

fn lexicon() -> EntityLexicon {
    let e = |name: &str, forms: &[&str]| Entity { name: name.into(), surface_forms: forms.iter().map(|s| s.to_string()).collect() };
    EntityLexicon::new(vec![
        e("breast", &["breast"]),
        e("nodule", &["nodule", "nodules"]),
        e("lymph node", &["lymph node"]),
        e("CDFI", &["cdfi", "colour doppler"]),
    ])
    .unwrap()
}

#[test]
fn ce_hand_values() {
    let lex = lexicon();
    let (c, r) = one("left breast scan", "breast nodule seen");
    let m = ce_metrics(&c, &r, &lex).unwrap();
    assert_eq!((m.accuracy, m.precision, m.recall), (0.0, 1.0, 0.5));
    assert!(close(m.f1, 2.0 / 3.0));
    let (c, r) = one("breast with Nodules", "nodule of the breast");
    let m = ce_metrics(&c, &r, &lex).unwrap();
    assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    // phrase forms need contiguous tokens
    assert_eq!(lex.detect(&toks("lymph large node")), vec![false; 4]);
    assert_eq!(lex.detect(&toks("CDFI : lymph node")), vec![false, false, true, true]);
    let (c, r) = one("nothing here", "nothing there");
    let m = ce_metrics(&c, &r, &lex).unwrap();
    assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
    let (c, r) = one("nothing here", "breast");
    let m = ce_metrics(&c, &r, &lex).unwrap();
    assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (0.0, 1.0, 0.0, 0.0));
}

#[test]
fn lexicon_validation_and_json_shape() {
    assert!(EntityLexicon::new(vec![]).is_err());
    assert!(EntityLexicon::new(vec![Entity { name: "x".into(), surface_forms: vec![] }]).is_err());
    let json = r#"{"entities": [{"name": "liver", "surface_forms": ["liver", "hepatic"]}]}"#;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lex.json");
    std::fs::write(&path, json).unwrap();
    let lex = EntityLexicon::load(&path).unwrap();
    assert_eq!(lex.entities[0].surface_forms.len(), 2);
}

#[test]
fn evaluate_combines_everything() {
    let cs = vec![toks("breast nodule seen"), toks("a b c")];
    let rs = vec![toks("breast nodule seen"), toks("a b d")];
    let rep = evaluate(&cs, &rs, &lexicon()).unwrap();
    assert_eq!(rep.n_pairs, 2);
    assert_eq!(rep.bleu, bleu(&cs, &rs).unwrap());
    assert!(rep.csv_row().starts_with("2,"));
    assert_eq!(rep.csv_row().split(',').count(), reportgen_core::metrics::EvalReport::CSV_HEADER.split(',').count());
}

#[test]
fn sentinels_are_stripped() {
    let t = toks("<start> a b <end> <pad> <pad>");
    assert_eq!(strip_sentinels(&t), toks("a b"));
}

#[test]
fn meteor_long_reports_stay_fast_and_consistent() {
    // repeated punctuation makes the exact search non-trivial
    let r = toks("liver size normal , capsule smooth , echo even , vessels clear , duct not dilated , gallbladder normal , wall smooth , no stones");
    let c = toks("capsule smooth , liver size normal , vessels clear , echo even , no stones , gallbladder normal , duct not dilated , wall smooth");
    let a = align(&c, &r);
    assert_eq!(a.matches, c.len());
    // eight reordered clauses can never share a chunk
    assert!(a.chunks >= 8);
    let mut used = vec![false; r.len()];
    let mut greedy_chunks = 0;
    let mut prev: Option<usize> = None;
    for tok in &c {
        let j = prev
            .map(|p| p + 1)
            .filter(|&j| j < r.len() && !used[j] && &r[j] == tok)
            .or_else(|| (0..r.len()).find(|&j| !used[j] && &r[j] == tok))
            .unwrap();
        if prev != Some(j.wrapping_sub(1)) {
            greedy_chunks += 1;
        }
        used[j] = true;
        prev = Some(j);
    }
    assert!(a.chunks <= greedy_chunks);
}

fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(str::to_string)
}

proptest! {
    #[test]
    fn small_pairs_match_oracles(c in prop::collection::vec(word(), 1..8), r in prop::collection::vec(word(), 1..8)) {
        let b = bleu(&[c.clone()], &[r.clone()]).unwrap();
        let o = oracles::bleu(&[(c.clone(), r.clone())]);
        for k in 0..4 {
            prop_assert!(close(b[k], o[k]));
        }
        prop_assert!(close(rouge_l_pair(&c, &r), oracles::rouge_l(&c, &r)));
        let (m, ch) = oracles::best_alignment(&c, &r);
        let a = align(&c, &r);
        prop_assert_eq!((a.matches, a.chunks), (m, ch));
    }

    #[test]
    fn superset_predictions_have_full_recall(
        truth in prop::collection::vec(any::<bool>(), 4),
        extra in prop::collection::vec(any::<bool>(), 4),
    ) {
        let lex = lexicon();
        let forms = ["breast", "nodule", "lymph node", "cdfi"];
        let mk = |mask: &[bool]| -> Vec<String> {
            forms.iter().zip(mask).filter(|(_, &m)| m).flat_map(|(f, _)| toks(f)).chain(toks("filler")).collect()
        };
        let pred: Vec<bool> = truth.iter().zip(&extra).map(|(a, b)| *a || *b).collect();
        let m = ce_metrics(&[mk(&pred)], &[mk(&truth)], &lex).unwrap();
        prop_assert_eq!(m.recall, 1.0);
    }

    #[test]
    fn corpus_metrics_ignore_order(seed in 0u64..1000) {
        use rand::seq::SliceRandom;
        let mut pairs: Vec<_> = SUITE.iter().map(|(c, r)| (toks(c), toks(r))).collect();
        let (c0, r0): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        pairs.shuffle(&mut reportgen_core::rng::seeded(seed));
        let (c1, r1): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let lex = lexicon();
        let a = evaluate(&c0, &r0, &lex).unwrap();
        let b = evaluate(&c1, &r1, &lex).unwrap();
        for k in 0..4 {
            prop_assert!(close(a.bleu[k], b.bleu[k]));
        }
        prop_assert!(close(a.rouge_l, b.rouge_l) && close(a.meteor, b.meteor) && close(a.ce.f1, b.ce.f1));
    }
}
