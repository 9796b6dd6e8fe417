use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::{anyhow, Context, Result};
use reportgen_core::autodiff::ParamStore;
use reportgen_core::clustering::KnowledgeTopics;
use reportgen_core::corpus::{RawRecord, TokenizedReport, Vocabulary};
use reportgen_core::model::{Checkpoint, Model};
use reportgen_core::rng::derive_seed;
use reportgen_core::training::{CheckpointSink, ScEmbedder, TrainSample, Trainer};

use super::ensure_dir;
use crate::artifacts::{index_by_id, Workspace, BEST_CKPT, LAST_CKPT, TRAIN_LOG};
use crate::config::{PipelineConfig, Split};

/// Writes `last.ckpt` after every epoch and `model.ckpt` on improvement.
struct FileSink<'a> {
    ws: &'a Workspace<'a>,
    model: Model,
    vocab: Vocabulary,
}

impl CheckpointSink for FileSink<'_> {
    fn epoch_end(&mut self, epoch: usize, store: &ParamStore<f32>, is_best: bool) -> reportgen_core::Result<()> {
        let ckpt = Checkpoint { model: self.model.clone(), store: store.clone(), vocab: self.vocab.clone(), epoch: Some(epoch) };
        let bytes = ckpt.to_bytes()?;
        std::fs::write(self.ws.path(LAST_CKPT), &bytes)?;
        if is_best {
            std::fs::write(self.ws.path(BEST_CKPT), &bytes)?;
        }
        Ok(())
    }
}

fn build_samples(
    ws: &Workspace,
    ids: &[String],
    records: &HashMap<String, RawRecord>,
    reports: &HashMap<String, TokenizedReport>,
    vocab: &Vocabulary,
    topics: &KnowledgeTopics,
    embedder: &ScEmbedder,
) -> Result<Vec<TrainSample>> {
    let raw = ids
        .iter()
        .map(|id| records.get(id).ok_or_else(|| anyhow!("split id {id} is not in the corpus")))
        .collect::<Result<Vec<_>>>()?;
    let images = ws.images(&raw)?;
    ids.iter()
        .zip(images)
        .map(|(id, pair)| {
            let report = reports.get(id).ok_or_else(|| anyhow!("split id {id} has no tokenized report"))?;
            let topic = *topics.topics.get(id).ok_or_else(|| anyhow!("report {id} has no distilled topic"))?;
            TrainSample::new(id.clone(), pair, vocab.encode(&report.tokens), topic, embedder)
                .with_context(|| format!("report {id}"))
        })
        .collect()
}

pub fn train(config: &PipelineConfig) -> Result<()> {
    let ws = Workspace::new(config);
    let vocab = ws.vocab()?;
    let topics = ws.topics()?;
    let reports = index_by_id(ws.tokenized()?, |r| r.id.as_str());
    let records = index_by_id(ws.corpus()?, |r| r.id.as_str());
    let train_ids = ws.split_ids(Split::Train)?;
    let mut val_ids = ws.split_ids(Split::Val)?;
    if val_ids.is_empty() {
        val_ids = train_ids.clone();
    }

    let train_reports: Vec<TokenizedReport> = train_ids
        .iter()
        .filter_map(|id| reports.get(id).cloned())
        .collect();
    let embedder = ScEmbedder::fit(&train_reports, &vocab)?;
    let train = build_samples(&ws, &train_ids, &records, &reports, &vocab, &topics, &embedder)?;
    let val = build_samples(&ws, &val_ids, &records, &reports, &vocab, &topics, &embedder)?;

    let model_config = config.model.resolve(topics.k, vocab.len())?;
    let (model, store) = Model::init(&model_config, derive_seed(config.seed, "model-init"))?;
    let mut train_config = config.train.clone();
    train_config.seed = derive_seed(config.seed, "train");

    ensure_dir(&config.output)?;
    let mut log = BufWriter::new(File::create(ws.path(TRAIN_LOG))?);
    let mut log_error = None;
    let mut sink = FileSink { ws: &ws, model: model.clone(), vocab: vocab.clone() };
    let mut trainer = Trainer::new(model, store, train_config, embedder)?;
    let summary = trainer.fit(&train, &val, &mut sink, |outcome| {
        let r = &outcome.record;
        eprintln!(
            "epoch {:>3}  loss {:.4}  kmve {:.4}  tf {:.4}  sc {:.4}  val {:.4}",
            r.epoch,
            r.mean_loss,
            r.kmve,
            r.tf,
            r.sc,
            r.val_loss.unwrap_or(f64::NAN)
        );
        if log_error.is_none() {
            let line = serde_json::to_string(r).expect("epoch record serialises");
            if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
                log_error = Some(e);
            }
        }
    })?;
    if let Some(e) = log_error {
        return Err(e).context("writing the training log");
    }
    eprintln!(
        "train: {} epochs, best epoch {} (validation loss {:.4})",
        summary.records.len(),
        summary.best_epoch,
        summary.best_val_loss
    );
    Ok(())
}
