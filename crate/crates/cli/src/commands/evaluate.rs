use std::path::Path;

use anyhow::{anyhow, Result};
use reportgen_core::corpus::read_jsonl;
use reportgen_core::metrics::{evaluate as score, Entity, EntityLexicon, EvalReport};
use reportgen_core::Error;

use super::ensure_dir;
use crate::artifacts::{index_by_id, require, Prediction, Workspace, EVAL_CSV, EVAL_JSON, PREDICTIONS};
use crate::config::{write_json, PipelineConfig};

/// Breast-ultrasound key entities plus the organs of the synthetic corpus.
pub fn default_lexicon() -> EntityLexicon {
    let entity = |name: &str, forms: &[&str]| Entity {
        name: name.to_string(),
        surface_forms: forms.iter().map(|s| s.to_string()).collect(),
    };
    EntityLexicon::new(vec![
        entity("breast", &["breast", "breasts"]),
        entity("gland", &["gland", "glands", "glandular"]),
        entity("cdfi", &["cdfi", "color doppler"]),
        entity("axilla", &["axilla", "axillary"]),
        entity("echogenicity", &["echogenicity", "echo", "echotexture"]),
        entity("nodule", &["nodule", "nodules", "mass"]),
        entity("lymph node", &["lymph node", "lymph nodes"]),
        entity("duct", &["duct", "ducts"]),
        entity("lesion", &["lesion", "lesions"]),
        entity("subcutaneous fat layer", &["subcutaneous fat layer", "subcutaneous fat"]),
        entity("tumour", &["tumour", "tumor", "neoplasm"]),
        entity("thyroid", &["thyroid", "isthmus"]),
        entity("cyst", &["cyst", "cystic"]),
        entity("calcification", &["calcification", "calcifications"]),
        entity("liver", &["liver", "portal vein"]),
        entity("gallbladder", &["gallbladder"]),
        entity("kidney", &["kidney", "renal"]),
        entity("spleen", &["spleen", "splenic"]),
        entity("pancreas", &["pancreas"]),
        entity("blood flow", &["blood flow", "vascularity"]),
    ])
    .expect("built-in lexicon is valid")
}

pub fn evaluate(config: &PipelineConfig, predictions: Option<&Path>, entailment: bool) -> Result<()> {
    if entailment {
        return Err(Error::Unsupported("entailment-based entity metrics need an external model".into()).into());
    }
    let ws = Workspace::new(config);
    let pred_path = predictions.map_or_else(|| ws.path(PREDICTIONS), Path::to_path_buf);
    let preds: Vec<Prediction> = read_jsonl(require(&pred_path)?)?;
    let reports = index_by_id(ws.tokenized()?, |r| r.id.as_str());
    let lexicon = match &config.lexicon {
        Some(p) => EntityLexicon::load(require(p)?)?,
        None => default_lexicon(),
    };

    let mut candidates = Vec::with_capacity(preds.len());
    let mut references = Vec::with_capacity(preds.len());
    for p in &preds {
        let r = reports.get(&p.id).ok_or_else(|| anyhow!("prediction {} has no reference report", p.id))?;
        candidates.push(p.report.split_whitespace().map(str::to_string).collect::<Vec<_>>());
        references.push(r.body().to_vec());
    }
    let report: EvalReport = score(&candidates, &references, &lexicon)?;

    ensure_dir(&config.output)?;
    write_json(&ws.path(EVAL_JSON), &report)?;
    std::fs::write(ws.path(EVAL_CSV), format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()))?;
    let [b1, _, _, b4] = report.bleu;
    eprintln!(
        "evaluate: {} pairs  BLEU-1 {b1:.4}  BLEU-4 {b4:.4}  ROUGE-L {:.4}  METEOR {:.4}  CE-F1 {:.4}",
        report.n_pairs, report.rouge_l, report.meteor, report.ce.f1
    );
    Ok(())
}
