use anyhow::{anyhow, Result};
use rayon::prelude::*;
use reportgen_core::corpus::write_jsonl;
use reportgen_core::metrics::strip_sentinels;
use reportgen_core::model::{export_attention, Checkpoint};

use super::ensure_dir;
use crate::artifacts::{index_by_id, require, Prediction, Workspace, PREDICTIONS};
use crate::config::PipelineConfig;

pub fn generate(config: &PipelineConfig) -> Result<()> {
    let ws = Workspace::new(config);
    let ckpt = Checkpoint::load(require(&config.output.join(&config.generate.checkpoint))?)?;
    let ids = ws.split_ids(config.generate.split)?;
    let records = index_by_id(ws.corpus()?, |r| r.id.as_str());
    let raw = ids
        .iter()
        .map(|id| records.get(id).ok_or_else(|| anyhow!("split id {id} is not in the corpus")))
        .collect::<Result<Vec<_>>>()?;
    let images = ws.images(&raw)?;
    let mode = config.generate.decode;
    let outputs = images
        .par_iter()
        .map(|pair| ckpt.model.generate_from_images(&ckpt.store, pair, mode))
        .collect::<reportgen_core::Result<Vec<_>>>()?;

    ensure_dir(&config.output)?;
    if config.generate.attention {
        let dir = ws.path("attention");
        ensure_dir(&dir)?;
        for (id, out) in ids.iter().zip(&outputs) {
            std::fs::write(dir.join(format!("{id}.csv")), export_attention(out).to_csv(&ckpt.vocab)?)?;
        }
    }
    let predictions: Vec<Prediction> = ids
        .iter()
        .zip(&outputs)
        .map(|(id, out)| Prediction {
            id: id.clone(),
            report: strip_sentinels(&ckpt.vocab.decode(out.emitted())).join(" "),
        })
        .collect();
    write_jsonl(&ws.path(PREDICTIONS), &predictions)?;
    eprintln!("generate: {} reports -> {}", predictions.len(), ws.path(PREDICTIONS).display());
    Ok(())
}
