//! Report embeddings: bag of words, TF-IDF and pluggable sentence embedders.

use serde::{Deserialize, Serialize};

use crate::corpus::{TokenizedReport, Vocabulary, RESERVED};
use crate::matrix::Matrix;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMethod {
    Bow,
    Tfidf,
    External,
}

impl EmbedMethod {
    pub fn tag(self) -> &'static str {
        match self {
            EmbedMethod::Bow => "bow",
            EmbedMethod::Tfidf => "tfidf",
            EmbedMethod::External => "external",
        }
    }
}

impl std::str::FromStr for EmbedMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bow" => Ok(EmbedMethod::Bow),
            "tfidf" | "tf-idf" => Ok(EmbedMethod::Tfidf),
            "external" => Ok(EmbedMethod::External),
            other => Err(Error::config(format!("unknown embedding method {other:?}"))),
        }
    }
}

/// One row per report.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub matrix: Matrix,
    pub method: EmbedMethod,
    pub report_ids: Vec<String>,
    /// Column names: vocabulary tokens for count-based methods.
    pub columns: Option<Vec<String>>,
}

impl EmbeddingMatrix {
    pub fn width(&self) -> usize {
        self.matrix.cols()
    }

    pub fn to_csv(&self) -> String {
        self.matrix.to_csv(self.columns.as_deref())
    }
}

/// Counts of each non-reserved vocabulary token in a report body.
/// Column `j` corresponds to vocabulary index `j + RESERVED`.
pub fn token_counts(report: &TokenizedReport, vocab: &Vocabulary) -> Vec<f32> {
    let mut row = vec![0.0f32; vocab.len() - RESERVED];
    for token in report.body() {
        let idx = vocab.index(token);
        if idx >= RESERVED {
            row[idx - RESERVED] += 1.0;
        }
    }
    row
}

fn count_matrix(corpus: &[TokenizedReport], vocab: &Vocabulary) -> Result<Vec<Vec<f32>>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if vocab.len() <= RESERVED {
        return Err(Error::config("vocabulary has no content tokens"));
    }
    Ok(corpus.iter().map(|r| token_counts(r, vocab)).collect())
}

fn wrap(rows: Vec<Vec<f32>>, method: EmbedMethod, corpus: &[TokenizedReport], vocab: Option<&Vocabulary>) -> Result<EmbeddingMatrix> {
    Ok(EmbeddingMatrix {
        matrix: Matrix::from_rows(&rows)?,
        method,
        report_ids: corpus.iter().map(|r| r.id.clone()).collect(),
        columns: vocab.map(|v| v.tokens()[RESERVED..].to_vec()),
    })
}

pub fn bow_embed(corpus: &[TokenizedReport], vocab: &Vocabulary) -> Result<EmbeddingMatrix> {
    let rows = count_matrix(corpus, vocab)?;
    wrap(rows, EmbedMethod::Bow, corpus, Some(vocab))
}

/// Smoothed inverse document frequency `ln((1+n)/(1+df)) + 1` per column.
pub fn inverse_document_frequency(corpus: &[TokenizedReport], vocab: &Vocabulary) -> Result<Vec<f32>> {
    let rows = count_matrix(corpus, vocab)?;
    Ok(idf_from_counts(&rows))
}

fn idf_from_counts(rows: &[Vec<f32>]) -> Vec<f32> {
    let n = rows.len() as f64;
    let width = rows.first().map_or(0, Vec::len);
    (0..width)
        .map(|j| {
            let df = rows.iter().filter(|r| r[j] > 0.0).count() as f64;
            (((1.0 + n) / (1.0 + df)).ln() + 1.0) as f32
        })
        .collect()
}

/// Scales `row` to unit L2 norm in place; zero rows stay zero.
pub fn l2_normalize(row: &mut [f32]) {
    let norm = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in row.iter_mut() {
            *v = (*v as f64 / norm) as f32;
        }
    }
}

/// Raw counts times smoothed idf, then L2-normalised per row.
pub fn tfidf_embed(corpus: &[TokenizedReport], vocab: &Vocabulary) -> Result<EmbeddingMatrix> {
    let mut rows = count_matrix(corpus, vocab)?;
    let idf = idf_from_counts(&rows);
    for row in &mut rows {
        for (v, w) in row.iter_mut().zip(&idf) {
            *v *= w;
        }
        l2_normalize(row);
    }
    wrap(rows, EmbedMethod::Tfidf, corpus, Some(vocab))
}

/// Produces one fixed-width vector per report (e.g. a pretrained sentence
/// encoder served elsewhere).
pub trait SentenceEmbedder: Send + Sync {
    fn embed(&self, corpus: &[TokenizedReport]) -> Result<Vec<Vec<f32>>>;
}

/// Default provider: TF-IDF over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct TfidfEmbedder {
    pub vocab: Vocabulary,
}

impl SentenceEmbedder for TfidfEmbedder {
    fn embed(&self, corpus: &[TokenizedReport]) -> Result<Vec<Vec<f32>>> {
        let m = tfidf_embed(corpus, &self.vocab)?;
        Ok(m.matrix.iter_rows().map(<[f32]>::to_vec).collect())
    }
}

pub fn external_embed(corpus: &[TokenizedReport], provider: &dyn SentenceEmbedder) -> Result<EmbeddingMatrix> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let rows = provider.embed(corpus).map_err(|e| match e {
        Error::EmbedderUnavailable(_) => e,
        other => Error::EmbedderUnavailable(other.to_string()),
    })?;
    if rows.len() != corpus.len() {
        return Err(Error::EmbedderUnavailable(format!(
            "provider returned {} vectors for {} reports",
            rows.len(),
            corpus.len()
        )));
    }
    let width = rows[0].len();
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(Error::EmbedderUnavailable("provider returned ragged or empty vectors".into()));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::EmbedderUnavailable("provider returned non-finite values".into()));
    }
    wrap(rows, EmbedMethod::External, corpus, None)
}

/// Dispatches on `method`; `External` uses the provider when given,
/// otherwise falls back to TF-IDF with the external tag.
pub fn embed(
    method: EmbedMethod,
    corpus: &[TokenizedReport],
    vocab: &Vocabulary,
    provider: Option<&dyn SentenceEmbedder>,
) -> Result<EmbeddingMatrix> {
    match method {
        EmbedMethod::Bow => bow_embed(corpus, vocab),
        EmbedMethod::Tfidf => tfidf_embed(corpus, vocab),
        EmbedMethod::External => match provider {
            Some(p) => external_embed(corpus, p),
            None => external_embed(corpus, &TfidfEmbedder { vocab: vocab.clone() }),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{tokenize, DefaultSegmenter};
    use proptest::prelude::*;

    fn report(id: &str, text: &str) -> TokenizedReport {
        TokenizedReport { id: id.into(), tokens: tokenize(text, &DefaultSegmenter).unwrap() }
    }

    fn two_docs() -> (Vec<TokenizedReport>, Vocabulary) {
        let docs = vec![report("a", "nodule seen"), report("b", "nodule clear")];
        let vocab = Vocabulary::from_tokens(
            ["<pad>", "<start>", "<end>", "<unk>", "nodule", "seen", "clear"]
                .map(String::from)
                .to_vec(),
        )
        .unwrap();
        (docs, vocab)
    }

    #[test]
    fn bow_counts() {
        let (docs, vocab) = two_docs();
        let m = bow_embed(&docs, &vocab).unwrap();
        assert_eq!(m.matrix.row(0), [1.0, 1.0, 0.0]);
        assert_eq!(m.matrix.row(1), [1.0, 0.0, 1.0]);
        assert_eq!(m.width(), vocab.len() - RESERVED);
        assert_eq!(m.columns.as_deref().unwrap(), ["nodule", "seen", "clear"]);
    }

    #[test]
    fn unknown_tokens_give_zero_row() {
        let (_, vocab) = two_docs();
        let m = bow_embed(&[report("z", "foo bar")], &vocab).unwrap();
        assert!(m.matrix.row(0).iter().all(|&v| v == 0.0));
        let t = tfidf_embed(&[report("z", "foo bar")], &vocab).unwrap();
        assert!(t.matrix.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn idf_hand_values() {
        let (docs, vocab) = two_docs();
        let idf = inverse_document_frequency(&docs, &vocab).unwrap();
        assert!((idf[0] - 1.0).abs() < 1e-7);
        assert!((idf[1] as f64 - ((1.5f64).ln() + 1.0)).abs() < 1e-6);
        assert!((idf[1] - 1.4055).abs() < 1e-4);
    }

    #[test]
    fn tfidf_rows_unit_norm() {
        let (docs, vocab) = two_docs();
        let m = tfidf_embed(&docs, &vocab).unwrap();
        for row in m.matrix.iter_rows() {
            let n: f64 = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        let expected = 1.0 / (1.0 + 1.4055f32.powi(2)).sqrt();
        assert!((m.matrix.row(0)[0] - expected).abs() < 1e-4);
    }

    #[test]
    fn empty_corpus() {
        let (_, vocab) = two_docs();
        assert!(matches!(bow_embed(&[], &vocab), Err(Error::EmptyCorpus)));
        assert!(matches!(tfidf_embed(&[], &vocab), Err(Error::EmptyCorpus)));
    }

    struct Fixed(Vec<Vec<f32>>);
    impl SentenceEmbedder for Fixed {
        fn embed(&self, _: &[TokenizedReport]) -> Result<Vec<Vec<f32>>> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn external_provider_contract() {
        let (docs, vocab) = two_docs();
        let default = external_embed(&docs, &TfidfEmbedder { vocab: vocab.clone() }).unwrap();
        assert_eq!(default.matrix, tfidf_embed(&docs, &vocab).unwrap().matrix);

        let wide = Fixed(vec![vec![0.5; 768], vec![0.25; 768]]);
        assert_eq!(external_embed(&docs, &wide).unwrap().width(), 768);

        let ragged = Fixed(vec![vec![0.5; 768], vec![0.25; 767]]);
        assert!(matches!(external_embed(&docs, &ragged), Err(Error::EmbedderUnavailable(_))));
    }

    #[test]
    fn same_template_rows_match_up_to_slots() {
        let c = crate::corpus::generate_synthetic_corpus(5, 60, 2).unwrap();
        let docs: Vec<_> = c
            .records
            .iter()
            .map(|r| crate::corpus::preprocess_record(r, &DefaultSegmenter).unwrap())
            .collect();
        let vocab = Vocabulary::build(&docs);
        let m = bow_embed(&docs, &vocab).unwrap();
        let slot_words: Vec<usize> = [
            "regular", "irregular", "smooth", "lobulated", "angular", "blurred", "hypoechoic",
            "isoechoic", "hyperechoic", "anechoic", "heterogeneous", "homogeneous",
        ]
        .iter()
        .map(|w| vocab.index(w))
        .filter(|&i| i >= RESERVED)
        .map(|i| i - RESERVED)
        .collect();
        for i in 0..docs.len() {
            for j in 0..docs.len() {
                if c.labels[i] != c.labels[j] {
                    continue;
                }
                for col in 0..m.width() {
                    if !slot_words.contains(&col) {
                        assert_eq!(m.matrix.row(i)[col], m.matrix.row(j)[col]);
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn bow_row_sums_are_token_counts(words in proptest::collection::vec("[abc]{1,2}", 1..12)) {
            let doc = report("p", &words.join(" "));
            let vocab = Vocabulary::build([&doc]);
            let m = bow_embed(std::slice::from_ref(&doc), &vocab).unwrap();
            let sum: f32 = m.matrix.row(0).iter().sum();
            prop_assert_eq!(sum as usize, doc.body().len());
        }

        #[test]
        fn permutation_permutes_rows(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let docs = vec![
                report("a", "nodule seen left"), report("b", "nodule clear"),
                report("c", "cyst seen"), report("d", "left cyst clear clear"),
            ];
            let vocab = Vocabulary::build(&docs);
            let base = tfidf_embed(&docs, &vocab).unwrap();
            let mut order: Vec<usize> = (0..docs.len()).collect();
            order.shuffle(&mut crate::rng::seeded(seed));
            let permuted: Vec<_> = order.iter().map(|&i| docs[i].clone()).collect();
            let m = tfidf_embed(&permuted, &vocab).unwrap();
            for (k, &i) in order.iter().enumerate() {
                prop_assert_eq!(m.matrix.row(k), base.matrix.row(i));
            }
        }

        #[test]
        fn ubiquitous_token_has_min_idf(extra in proptest::collection::vec("[xyz]", 1..6)) {
            let docs: Vec<_> = extra.iter().enumerate()
                .map(|(i, w)| report(&i.to_string(), &format!("common {w}")))
                .collect();
            let vocab = Vocabulary::build(&docs);
            let idf = inverse_document_frequency(&docs, &vocab).unwrap();
            let common = vocab.index("common") - RESERVED;
            prop_assert!((idf[common] - 1.0).abs() < 1e-7);
            prop_assert!(idf.iter().all(|&v| v >= idf[common]));
        }
    }
}
