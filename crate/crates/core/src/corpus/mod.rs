//! Record ingestion, normalisation, tokenisation and dataset splitting.

mod image;
mod normalize;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use self::image::GrayImage;
pub use normalize::{
    normalize_measurements, TOKEN_2D, TOKEN_3D, TOKEN_CM, TOKEN_LOC, TOKEN_MM,
};
pub use synth::{generate_synthetic_corpus, SyntheticCorpus};

pub const PAD: &str = "<pad>";
pub const START: &str = "<start>";
pub const END: &str = "<end>";
pub const UNK: &str = "<unk>";

pub const PAD_ID: usize = 0;
pub const START_ID: usize = 1;
pub const END_ID: usize = 2;
pub const UNK_ID: usize = 3;
pub const RESERVED: usize = 4;

/// One patient case: the report and its two images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    #[serde(rename = "report")]
    pub report_text: String,
    #[serde(rename = "images")]
    pub image_refs: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedReport {
    pub id: String,
    pub tokens: Vec<String>,
}

impl TokenizedReport {
    /// Token count including both sentinels.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    /// Tokens without the `<start>` / `<end>` sentinels.
    pub fn body(&self) -> &[String] {
        let n = self.tokens.len();
        if n >= 2 {
            &self.tokens[1..n - 1]
        } else {
            &[]
        }
    }
}

/// Splits normalised report text into words. Chinese word segmentation
/// plugs in here.
pub trait Segmenter: Send + Sync {
    fn segment(&self, text: &str) -> Vec<String>;
}

/// Splits on whitespace; every punctuation character becomes its own token.
/// `_` counts as a word character so placeholder tokens stay whole.
#[derive(Debug, Default, Clone, Copy)]
pub struct DefaultSegmenter;

impl Segmenter for DefaultSegmenter {
    fn segment(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut word = String::new();
        for c in text.chars() {
            if c.is_alphanumeric() || c == '_' {
                word.push(c);
                continue;
            }
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
        out
    }
}

/// Segments `text` and wraps it in sentinels.
pub fn tokenize(text: &str, segmenter: &dyn Segmenter) -> Result<Vec<String>> {
    let words = segmenter.segment(text);
    if words.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut tokens = Vec::with_capacity(words.len() + 2);
    tokens.push(START.to_string());
    tokens.extend(words.into_iter().filter(|w| w != START && w != END));
    tokens.push(END.to_string());
    Ok(tokens)
}

/// Normalises and tokenises a record's report.
pub fn preprocess_record(record: &RawRecord, segmenter: &dyn Segmenter) -> Result<TokenizedReport> {
    let text = normalize_measurements(&record.report_text);
    Ok(TokenizedReport {
        id: record.id.clone(),
        tokens: tokenize(&text, segmenter)?,
    })
}

/// Bijective token/index map with fixed reserved indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from (training) reports. Tokens are ordered by descending
    /// frequency, then lexicographically.
    pub fn build<'a>(reports: impl IntoIterator<Item = &'a TokenizedReport>) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for report in reports {
            for token in report.body() {
                *counts.entry(token.as_str()).or_default() += 1;
            }
        }
        let mut entries: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|(t, _)| ![PAD, START, END, UNK].contains(t))
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let tokens = [PAD, START, END, UNK]
            .into_iter()
            .chain(entries.into_iter().map(|(t, _)| t))
            .map(str::to_string)
            .collect();
        Self::from_tokens(tokens).expect("reserved tokens are present")
    }

    /// Rebuilds from an index-ordered token list (as persisted).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED || tokens[..RESERVED] != [PAD, START, END, UNK] {
            return Err(Error::Format("vocabulary must start with the reserved tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index(t)).collect()
    }

    /// Maps ids back to words, dropping sentinels and padding.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD_ID && i != START_ID && i != END_ID)
            .map(|&i| self.token(i).unwrap_or(UNK).to_string())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub test_ids: Vec<String>,
    pub seed: u64,
}

/// Shuffles ids by seed and cuts 7:1:2. Validation and test sizes are
/// `floor(n/10)` and `floor(n/5)`; training takes the remainder.
pub fn split_dataset(ids: &[String], seed: u64) -> Result<SplitManifest> {
    if ids.len() < 10 {
        return Err(Error::DatasetTooSmall { needed: 10, got: ids.len() });
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut crate::rng::seeded(seed));
    let n = ids.len();
    let n_val = n / 10;
    let n_test = n / 5;
    let test_ids = shuffled.split_off(n - n_test);
    let val_ids = shuffled.split_off(n - n_test - n_val);
    Ok(SplitManifest {
        train_ids: shuffled,
        val_ids,
        test_ids,
        seed,
    })
}

/// Reads a JSON Lines corpus, validating id uniqueness.
pub fn read_corpus(path: &Path) -> Result<Vec<RawRecord>> {
    let file = std::fs::File::open(path)?;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Format(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        if !seen.insert(record.id.clone()) {
            return Err(Error::Format(format!("duplicate record id {:?}", record.id)));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn write_corpus(path: &Path, records: &[RawRecord]) -> Result<()> {
    write_jsonl(path, records)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = std::fs::File::open(path)?;
    let mut items = Vec::new();
    for line in std::io::BufReader::new(file).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            items.push(serde_json::from_str(&line)?);
        }
    }
    Ok(items)
}
