use std::collections::BTreeMap;

use anyhow::{Context, Result};
use reportgen_core::corpus::{
    generate_synthetic_corpus, preprocess_record, split_dataset, write_corpus, write_jsonl, DefaultSegmenter,
    Vocabulary,
};

use super::ensure_dir;
use crate::artifacts::{VocabFile, Workspace, LABELS, SPLITS, TOKENIZED, VOCAB};
use crate::config::{write_json, PipelineConfig};

pub fn synth(config: &PipelineConfig) -> Result<()> {
    let s = &config.synth;
    let corpus = generate_synthetic_corpus(s.templates, s.records, config.seed)?;
    let out = &config.output;
    ensure_dir(&out.join("images"))?;
    for (record, pair) in corpus.records.iter().zip(&corpus.images) {
        for (rel, image) in record.image_refs.iter().zip(pair) {
            let p = out.join(rel);
            image.save_pgm(&p).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    write_corpus(&out.join("corpus.jsonl"), &corpus.records)?;
    let labels: BTreeMap<&str, usize> =
        corpus.records.iter().map(|r| r.id.as_str()).zip(corpus.labels.iter().copied()).collect();
    write_json(&out.join(LABELS), &labels)?;
    eprintln!("synth: {} records from {} templates -> {}", s.records, s.templates, out.display());
    Ok(())
}

pub fn preprocess(config: &PipelineConfig) -> Result<()> {
    let ws = Workspace::new(config);
    let records = ws.corpus()?;
    let reports = records
        .iter()
        .map(|r| preprocess_record(r, &DefaultSegmenter).with_context(|| format!("record {}", r.id)))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = reports.iter().map(|r| r.id.clone()).collect();
    let splits = split_dataset(&ids, config.seed)?;
    let train: Vec<_> = {
        let set: std::collections::HashSet<&String> = splits.train_ids.iter().collect();
        reports.iter().filter(|r| set.contains(&r.id)).collect()
    };
    let vocab = Vocabulary::build(train);
    ensure_dir(&config.output)?;
    write_jsonl(&ws.path(TOKENIZED), &reports)?;
    write_json(&ws.path(VOCAB), &VocabFile { tokens: vocab.tokens().to_vec() })?;
    write_json(&ws.path(SPLITS), &splits)?;
    eprintln!(
        "preprocess: {} reports, vocabulary {} tokens, split {}/{}/{}",
        reports.len(),
        vocab.len(),
        splits.train_ids.len(),
        splits.val_ids.len(),
        splits.test_ids.len()
    );
    Ok(())
}
