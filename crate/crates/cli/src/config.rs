//! Pipeline configuration: defaults, then a JSON file, then dotted
//! `--section.key value` flags, then the dedicated flags of each command.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use reportgen_core::clustering::GridConfig;
use reportgen_core::embedding::EmbedMethod;
use reportgen_core::model::{DecodeMode, EncoderInput, ModelConfig};
use reportgen_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifacts::BEST_CKPT;
use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub templates: usize,
    pub records: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { templates: 5, records: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub methods: Vec<EmbedMethod>,
    pub grid: GridConfig,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { methods: vec![EmbedMethod::Bow, EmbedMethod::Tfidf], grid: GridConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `desk` or `full`; ignored when `inline` is given.
    pub preset: String,
    pub encoder_input: EncoderInput,
    /// Full architecture; `k_topics` and `vocab_size` are always taken from
    /// the distilled topics and the vocabulary.
    pub inline: Option<ModelConfig>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { preset: "desk".into(), encoder_input: EncoderInput::Patches, inline: None }
    }
}

impl ModelSection {
    pub fn resolve(&self, k_topics: usize, vocab_size: usize) -> reportgen_core::Result<ModelConfig> {
        let mut config = match &self.inline {
            Some(c) => c.clone(),
            None => {
                let mut c = ModelConfig::preset(&self.preset, k_topics, vocab_size)?;
                c.encoder_input = self.encoder_input;
                c
            }
        };
        config.k_topics = k_topics;
        config.vocab_size = vocab_size;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub split: Split,
    pub decode: DecodeMode,
    pub attention: bool,
    /// Checkpoint to decode with, relative to the output directory.
    pub checkpoint: PathBuf,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { split: Split::Test, decode: DecodeMode::Greedy, attention: false, checkpoint: BEST_CKPT.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub templates: usize,
    /// DBSCAN density threshold; the radius is estimated from the data.
    pub min_pts: usize,
    pub dim: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { sizes: vec![100, 200, 400], templates: 5, min_pts: 5, dim: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Defaults to `<output>/corpus.jsonl`.
    pub corpus: Option<PathBuf>,
    pub output: PathBuf,
    pub seed: u64,
    /// Entity lexicon JSON; a built-in ultrasound lexicon when absent.
    pub lexicon: Option<PathBuf>,
    pub synth: SynthConfig,
    pub distill: DistillConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub bench: BenchConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            output: PathBuf::from("."),
            seed: 0,
            lexicon: None,
            synth: SynthConfig::default(),
            distill: DistillConfig::default(),
            model: ModelSection::default(),
            train: TrainConfig::default(),
            generate: GenerateConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn corpus_path(&self) -> PathBuf {
        self.corpus.clone().unwrap_or_else(|| self.output.join("corpus.jsonl"))
    }

    /// Layers a config file and dotted overrides over the defaults.
    pub fn assemble(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            let layer: Value = serde_json::from_str(&text)
                .map_err(|e| UsageError(format!("config {} is not valid JSON: {e}", path.display())))?;
            merge(&mut value, layer);
        }
        for (key, raw) in overrides {
            set_path(&mut value, key, parse_scalar(raw))?;
        }
        serde_json::from_value(value).map_err(|e| UsageError(format!("invalid configuration: {e}")).into())
    }
}

fn merge(base: &mut Value, layer: Value) {
    match (base, layer) {
        (Value::Object(b), Value::Object(l)) => {
            for (k, v) in l {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// JSON if it parses as JSON, otherwise the literal string.
fn parse_scalar(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = match node {
            Value::Object(m) => m,
            _ => bail!(UsageError(format!("config key {key:?} does not name a field"))),
        };
        if !obj.contains_key(*part) {
            bail!(UsageError(format!("unknown config key {key:?}")));
        }
        let slot = obj.get_mut(*part).expect("checked");
        if i + 1 == parts.len() {
            *slot = value;
            return Ok(());
        }
        node = slot;
    }
    unreachable!("split yields at least one part")
}

/// Pulls `--a.b value` and `--a.b=value` pairs (any flag whose name
/// contains a dot) out of the argument list.
pub fn extract_overrides(args: Vec<OsString>) -> Result<(Vec<OsString>, Vec<(String, String)>)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut iter = args.into_iter();
    while let Some(arg) = iter.next() {
        let Some(s) = arg.to_str().filter(|s| s.starts_with("--")) else {
            rest.push(arg);
            continue;
        };
        let body = &s[2..];
        let (name, inline) = match body.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (body, None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => iter
                .next()
                .and_then(|v| v.into_string().ok())
                .ok_or_else(|| UsageError(format!("--{name} needs a value")))?,
        };
        overrides.push((name.to_string(), value));
    }
    Ok((rest, overrides))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
