use anyhow::Result;
use reportgen_core::clustering::{grid_select, GridSelection, HeatmapGrid};
use reportgen_core::corpus::Vocabulary;
use reportgen_core::embedding::embed;
use reportgen_core::rng::derive_seed;
use serde::Serialize;

use super::ensure_dir;
use crate::artifacts::{Workspace, SELECTION, TOPICS};
use crate::config::{write_json, PipelineConfig};
use crate::UsageError;

#[derive(Serialize)]
struct SelectionFile<'a> {
    selection: &'a GridSelection,
    grids: &'a [HeatmapGrid],
}

pub fn distill(config: &PipelineConfig) -> Result<()> {
    let ws = Workspace::new(config);
    let reports = ws.tokenized()?;
    if config.distill.methods.is_empty() {
        return Err(UsageError("distill.methods is empty".into()).into());
    }
    // Topics describe the whole corpus, so the distiller sees every report.
    let vocab = Vocabulary::build(&reports);
    let embeddings = config
        .distill
        .methods
        .iter()
        .map(|&m| embed(m, &reports, &vocab, None))
        .collect::<reportgen_core::Result<Vec<_>>>()?;
    let mut grid = config.distill.grid.clone();
    grid.seed = derive_seed(config.seed, "distill");
    let result = grid_select(&embeddings, &grid)?;

    ensure_dir(&config.output)?;
    for g in &result.grids {
        let tag = g.method.tag();
        std::fs::write(ws.path(&format!("heatmap_{tag}.csv")), g.to_csv())?;
        std::fs::write(ws.path(&format!("heatmap_{tag}.svg")), g.to_svg())?;
    }
    write_json(&ws.path(SELECTION), &SelectionFile { selection: &result.selection, grids: &result.grids })?;
    write_json(&ws.path(TOPICS), &result.topics)?;
    let s = &result.selection;
    eprintln!(
        "distill: {} dim {} K {} silhouette {:.4}",
        s.embed_method.tag(),
        s.dim,
        s.k,
        s.silhouette
    );
    Ok(())
}
