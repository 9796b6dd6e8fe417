//! Artifact names and loaders shared by the commands.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use reportgen_core::clustering::KnowledgeTopics;
use reportgen_core::corpus::{read_corpus, read_jsonl, GrayImage, RawRecord, SplitManifest, TokenizedReport, Vocabulary};
use serde::{Deserialize, Serialize};

use crate::config::{load_json, PipelineConfig, Split};

pub const TOKENIZED: &str = "tokenized.jsonl";
pub const VOCAB: &str = "vocab.json";
pub const SPLITS: &str = "splits.json";
pub const LABELS: &str = "labels.json";
pub const SELECTION: &str = "selection.json";
pub const TOPICS: &str = "topics.json";
pub const BEST_CKPT: &str = "model.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const EVAL_JSON: &str = "eval.json";
pub const EVAL_CSV: &str = "eval.csv";
pub const BENCH: &str = "bench.csv";

/// A prerequisite file that an earlier command should have produced.
#[derive(Debug)]
pub struct MissingArtifact {
    pub name: String,
    pub path: PathBuf,
}

impl std::fmt::Display for MissingArtifact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "missing artifact {} (expected at {})", self.name, self.path.display())
    }
}

impl std::error::Error for MissingArtifact {}

pub fn require(path: &Path) -> Result<&Path> {
    if path.is_file() {
        Ok(path)
    } else {
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        Err(MissingArtifact { name, path: path.to_path_buf() }.into())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VocabFile {
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub report: String,
}

pub struct Workspace<'a> {
    pub config: &'a PipelineConfig,
}

impl<'a> Workspace<'a> {
    pub fn new(config: &'a PipelineConfig) -> Self {
        Self { config }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.output.join(name)
    }

    pub fn corpus(&self) -> Result<Vec<RawRecord>> {
        let path = self.config.corpus_path();
        Ok(read_corpus(require(&path)?)?)
    }

    pub fn tokenized(&self) -> Result<Vec<TokenizedReport>> {
        let path = self.path(TOKENIZED);
        Ok(read_jsonl(require(&path)?)?)
    }

    pub fn vocab(&self) -> Result<Vocabulary> {
        let file: VocabFile = load_json(require(&self.path(VOCAB))?)?;
        Ok(Vocabulary::from_tokens(file.tokens)?)
    }

    pub fn splits(&self) -> Result<SplitManifest> {
        load_json(require(&self.path(SPLITS))?)
    }

    pub fn topics(&self) -> Result<KnowledgeTopics> {
        load_json(require(&self.path(TOPICS))?)
    }

    /// Ids of `split`, in manifest order (`all` = train, val, test).
    pub fn split_ids(&self, split: Split) -> Result<Vec<String>> {
        let m = self.splits()?;
        Ok(match split {
            Split::Train => m.train_ids,
            Split::Val => m.val_ids,
            Split::Test => m.test_ids,
            Split::All => m.train_ids.into_iter().chain(m.val_ids).chain(m.test_ids).collect(),
        })
    }

    /// Image pairs of the given records, resolved relative to the corpus file.
    pub fn images(&self, records: &[&RawRecord]) -> Result<Vec<[GrayImage; 2]>> {
        let corpus = self.config.corpus_path();
        let base = corpus.parent().unwrap_or(Path::new("."));
        records
            .iter()
            .map(|r| {
                let load = |rel: &str| -> Result<GrayImage> {
                    let p = base.join(rel);
                    GrayImage::load(require(&p)?).with_context(|| format!("loading image {}", p.display()))
                };
                Ok([load(&r.image_refs[0])?, load(&r.image_refs[1])?])
            })
            .collect()
    }
}

pub fn index_by_id<T>(items: Vec<T>, id: impl Fn(&T) -> &str) -> HashMap<String, T> {
    items.into_iter().map(|t| (id(&t).to_string(), t)).collect()
}
